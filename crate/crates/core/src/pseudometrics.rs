//! Conditional-entropy style metrics: NCE, LEEP, NLEEP, their forms
//! normalized by the label entropy, and the diagonal Gaussian mixture that
//! NLEEP clusters with. Natural logarithms throughout.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covshrink;
use crate::error::{Error, Result};
use crate::matrixio::{FeatureMatrix, LabelVector, SoftPredictionMatrix};
use crate::projection::{self, ProjectionSpec};
use crate::rng;

/// Lower clamp applied inside `ln` for LEEP.
pub const LOG_CLAMP: f64 = 1e-12;

/// Projection size NLEEP reduces to before clustering.
pub const NLEEP_DEFAULT_Q: usize = 64;

/// Empirical label entropy `H(Y)`.
pub fn label_entropy(y: &LabelVector) -> f64 {
    let n = y.len() as f64;
    y.class_counts()
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Empirical joint `p(y, z)` of true labels and source pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalJoint {
    /// C_s × C; rows are pseudo-labels, columns true labels.
    pub joint: Array2<f64>,
    pub marginal_z: Array1<f64>,
}

impl EmpiricalJoint {
    pub fn from_labels(y: &LabelVector, z: &[usize], num_sources: usize) -> Result<Self> {
        if z.len() != y.len() {
            return Err(Error::Validation(format!(
                "{} pseudo-labels for {} labels",
                z.len(),
                y.len()
            )));
        }
        let n = y.len() as f64;
        let mut joint = Array2::<f64>::zeros((num_sources, y.num_classes()));
        for (&zi, &yi) in z.iter().zip(y.labels()) {
            if zi >= num_sources {
                return Err(Error::Validation(format!(
                    "pseudo-label {zi} out of range {num_sources}"
                )));
            }
            joint[(zi, yi)] += 1.0;
        }
        joint /= n;
        let marginal_z = joint.sum_axis(Axis(1));
        Ok(Self { joint, marginal_z })
    }

    /// `Σ p(y,z) ln p(y|z)`.
    pub fn neg_conditional_entropy(&self) -> f64 {
        let mut total = 0.0;
        for (row, &pz) in self.joint.axis_iter(Axis(0)).zip(&self.marginal_z) {
            for &p in row {
                if p > 0.0 {
                    total += p * (p / pz).ln();
                }
            }
        }
        total
    }
}

/// `NCE = (1/n) Σ_i ln p(y_i | z_i)` for hard pseudo-labels `z`.
pub fn nce(y: &LabelVector, z: &[usize]) -> Result<f64> {
    let num_sources = z.iter().max().map_or(1, |&m| m + 1);
    Ok(EmpiricalJoint::from_labels(y, z, num_sources)?.neg_conditional_entropy())
}

/// NCE on the argmax pseudo-labels of `theta`.
pub fn nce_soft(y: &LabelVector, theta: &SoftPredictionMatrix) -> Result<f64> {
    let z = theta.pseudo_labels();
    Ok(EmpiricalJoint::from_labels(y, &z, theta.num_sources())?.neg_conditional_entropy())
}

/// Log expected empirical prediction.
///
/// Source classes that receive no probability mass at all are dropped from the
/// empirical predictor with a warning.
pub fn leep(y: &LabelVector, theta: &SoftPredictionMatrix) -> Result<f64> {
    leep_view(y, theta.view())
}

fn leep_view(y: &LabelVector, theta: ArrayView2<'_, f64>) -> Result<f64> {
    let (n, k) = theta.dim();
    if n != y.len() {
        return Err(Error::Validation(format!("{n} prediction rows for {} labels", y.len())));
    }
    let c = y.num_classes();
    // mass[z][y] = Σ_i θ_i[z] 1[y_i = y]
    let mut mass = Array2::<f64>::zeros((k, c));
    for (row, &yi) in theta.axis_iter(Axis(0)).zip(y.labels()) {
        let mut col = mass.column_mut(yi);
        col += &row;
    }
    let totals = mass.sum_axis(Axis(1));
    let dropped = totals.iter().filter(|&&t| t <= 0.0).count();
    if dropped > 0 {
        log::warn!("LEEP: {dropped} source classes carry no probability mass and were dropped");
    }
    let mut cond = mass;
    for (mut row, &t) in cond.axis_iter_mut(Axis(0)).zip(&totals) {
        if t > 0.0 {
            row /= t;
        } else {
            row.fill(0.0);
        }
    }
    let total: f64 = theta
        .axis_iter(Axis(0))
        .zip(y.labels())
        .map(|(row, &yi)| row.dot(&cond.column(yi)).max(LOG_CLAMP).ln())
        .sum();
    Ok(total / n as f64)
}

/// `1 + raw / H(Y)`.
pub fn normalize_metric(raw: f64, h_y: f64) -> Result<f64> {
    if !(h_y > 0.0) {
        return Err(Error::Degenerate(format!(
            "label entropy {h_y} is not positive; normalization undefined"
        )));
    }
    Ok(1.0 + raw / h_y)
}

/// Settings for the diagonal Gaussian mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub max_iter: usize,
    /// Relative log-likelihood change that counts as converged.
    pub tol: f64,
    /// Variance floor as a fraction of the mean feature variance.
    pub var_floor_frac: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-6,
            var_floor_frac: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub k: usize,
    pub weights: Vec<f64>,
    /// K × q
    pub means: Array2<f64>,
    /// K × q
    pub variances: Array2<f64>,
    pub variance_floor: f64,
    /// Total log-likelihood of the training data under the final parameters.
    pub loglik: f64,
    /// Log-likelihood before each M-step, then the final value.
    pub loglik_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LLOYD_MAX_ITER: usize = 100;

impl GmmModel {
    /// Fits by EM, starting from k-means refined from k-means++ seeds drawn
    /// from `seed`.
    pub fn fit(x: ArrayView2<'_, f64>, k: usize, seed: u64, config: &GmmConfig) -> Result<Self> {
        let (n, q) = x.dim();
        if k == 0 || n < k {
            return Err(Error::Degenerate(format!("cannot fit {k} components to {n} samples")));
        }
        let mean = x.mean_axis(Axis(0)).expect("n >= 1");
        let mut var = Array1::<f64>::zeros(q);
        for (j, col) in x.axis_iter(Axis(1)).enumerate() {
            var[j] = col.iter().map(|&a| (a - mean[j]).powi(2)).sum::<f64>() / n as f64;
        }
        let mean_var = var.mean().unwrap_or(0.0);
        let floor = (config.var_floor_frac * mean_var).max(f64::MIN_POSITIVE);

        let centers = lloyd(x, kmeanspp(x, k, seed), LLOYD_MAX_ITER);
        let mut model = Self {
            k,
            weights: vec![1.0 / k as f64; k],
            means: centers.clone(),
            variances: Array2::from_shape_fn((k, q), |(_, j)| var[j].max(floor)),
            variance_floor: floor,
            loglik: f64::NEG_INFINITY,
            loglik_history: Vec::new(),
            iterations: 0,
            converged: false,
        };
        // Start EM from the hard k-means partition.
        let mut hard = Array2::<f64>::zeros((n, k));
        for (i, c) in nearest(x, &centers).into_iter().enumerate() {
            hard[(i, c)] = 1.0;
        }
        if hard.sum_axis(Axis(0)).iter().all(|&w| w > 0.0) {
            model.m_step(x, &hard);
        }

        let (mut resp, mut ll) = model.e_step(x);
        for it in 0..config.max_iter {
            model.loglik_history.push(ll);
            model.m_step(x, &resp);
            let (r, new_ll) = model.e_step(x);
            resp = r;
            model.iterations = it + 1;
            let done = (new_ll - ll).abs() <= config.tol * ll.abs().max(f64::MIN_POSITIVE);
            ll = new_ll;
            if done {
                model.converged = true;
                break;
            }
        }
        model.loglik_history.push(ll);
        model.loglik = ll;
        if !model.converged {
            log::warn!(
                "GMM EM stopped at the iteration cap ({}) before converging",
                config.max_iter
            );
        }
        Ok(model)
    }

    /// Per-sample log joint `ln w_k + ln N(x | μ_k, diag v_k)`, n × K.
    fn log_joint(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let q = x.ncols();
        let inv = self.variances.mapv(|v| 1.0 / v);
        let x2 = x.mapv(|v| v * v);
        let mu_inv = &self.means * &inv;
        // Σ_j (x_j − μ_j)²/v_j = x²·(1/v) − 2 x·(μ/v) + μ²·(1/v)
        let mut out = x2.dot(&inv.t());
        out -= &(x.dot(&mu_inv.t()) * 2.0);
        let consts: Vec<f64> = (0..self.k)
            .map(|c| {
                let quad: f64 = self.means.row(c).iter().zip(mu_inv.row(c)).map(|(m, mi)| m * mi).sum();
                let logdet: f64 = self.variances.row(c).iter().map(|v| v.ln()).sum();
                self.weights[c].ln() - 0.5 * (q as f64 * LN_2PI + logdet + quad)
            })
            .collect();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (v, &c) in row.iter_mut().zip(&consts) {
                *v = c - 0.5 * *v;
            }
        }
        out
    }

    /// Responsibilities and total log-likelihood.
    fn e_step(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, f64) {
        let mut lj = self.log_joint(x);
        let mut ll = 0.0;
        for mut row in lj.axis_iter_mut(Axis(0)) {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + s.ln();
            ll += lse;
            row.mapv_inplace(|v| (v - lse).exp());
        }
        (lj, ll)
    }

    fn m_step(&mut self, x: ArrayView2<'_, f64>, resp: &Array2<f64>) {
        let n = x.nrows() as f64;
        let nk = resp.sum_axis(Axis(0));
        let sums = resp.t().dot(&x);
        let sq = resp.t().dot(&x.mapv(|v| v * v));
        for c in 0..self.k {
            let w = nk[c];
            self.weights[c] = w / n;
            if w <= 0.0 {
                continue;
            }
            for j in 0..x.ncols() {
                let mu = sums[(c, j)] / w;
                let v = (sq[(c, j)] / w - mu * mu).max(self.variance_floor);
                self.means[(c, j)] = mu;
                self.variances[(c, j)] = v;
            }
        }
    }

    /// Posterior component probabilities, n × K; rows sum to one.
    pub fn responsibilities(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.e_step(x).0
    }
}

fn sq_dist_to(x: ArrayView2<'_, f64>, center: ArrayView1<'_, f64>) -> Vec<f64> {
    x.axis_iter(Axis(0))
        .map(|row| row.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum())
        .collect()
}

/// Greedy k-means++ seeding: the first centre is uniform; each later one is the
/// best of `2 + ln k` candidates drawn proportional to squared distance from
/// the nearest chosen centre.
fn kmeanspp(x: ArrayView2<'_, f64>, k: usize, seed: u64) -> Array2<f64> {
    let (n, q) = x.dim();
    let mut r = rng::stream(seed, "gmm-init", 0);
    let trials = 2 + (k as f64).ln() as usize;
    let mut centers = Array2::<f64>::zeros((k, q));
    let first = r.random_range(0..n);
    centers.row_mut(0).assign(&x.row(first));
    let mut dist = sq_dist_to(x, centers.row(0));
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let pick = if total > 0.0 {
                let mut u = r.random::<f64>() * total;
                let mut idx = n - 1;
                for (i, &dv) in dist.iter().enumerate() {
                    if u < dv {
                        idx = i;
                        break;
                    }
                    u -= dv;
                }
                idx
            } else {
                r.random_range(0..n)
            };
            let merged: Vec<f64> = dist
                .iter()
                .zip(sq_dist_to(x, x.row(pick)))
                .map(|(&a, b)| a.min(b))
                .collect();
            let potential: f64 = merged.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, pick, merged));
            }
        }
        let (_, pick, merged) = best.expect("at least one trial");
        centers.row_mut(c).assign(&x.row(pick));
        dist = merged;
    }
    centers
}

fn nearest(x: ArrayView2<'_, f64>, centers: &Array2<f64>) -> Vec<usize> {
    x.axis_iter(Axis(0))
        .map(|row| {
            centers
                .axis_iter(Axis(0))
                .map(|c| row.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .enumerate()
                .fold(
                    (0, f64::INFINITY),
                    |best, (i, d)| if d < best.1 { (i, d) } else { best },
                )
                .0
        })
        .collect()
}

/// Lloyd refinement; a centre that loses all its points stays where it was.
fn lloyd(x: ArrayView2<'_, f64>, mut centers: Array2<f64>, max_iter: usize) -> Array2<f64> {
    let k = centers.nrows();
    let mut assign = nearest(x, &centers);
    for _ in 0..max_iter {
        let mut sums = Array2::<f64>::zeros(centers.raw_dim());
        let mut counts = vec![0usize; k];
        for (row, &c) in x.axis_iter(Axis(0)).zip(&assign) {
            let mut s = sums.row_mut(c);
            s += &row;
            counts[c] += 1;
        }
        for (c, &m) in counts.iter().enumerate() {
            if m > 0 {
                let mean = &sums.row(c) / m as f64;
                centers.row_mut(c).assign(&mean);
            }
        }
        let next = nearest(x, &centers);
        if next == assign {
            break;
        }
        assign = next;
    }
    centers
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NleepConfig {
    /// Mixture components; defaults to the class count.
    pub k: Option<usize>,
    /// Projection size; defaults to `min(64, d)`.
    pub q: Option<usize>,
    pub seed: u64,
    pub gmm: GmmConfig,
}

impl NleepConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            k: None,
            q: None,
            seed,
            gmm: GmmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NleepResult {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// LEEP of the labels against the posterior of a Gaussian mixture fitted to
/// the (projected, standardized) features.
pub fn nleep(f: &FeatureMatrix, y: &LabelVector, config: &NleepConfig) -> Result<NleepResult> {
    if y.len() != f.n_samples() {
        return Err(Error::Validation(format!(
            "{} labels for {} feature rows",
            y.len(),
            f.n_samples()
        )));
    }
    let k = config.k.unwrap_or(y.num_classes());
    if f.n_samples() < k {
        return Err(Error::Degenerate(format!(
            "{} samples for {k} mixture components",
            f.n_samples()
        )));
    }
    let q = config.q.unwrap_or(NLEEP_DEFAULT_Q.min(f.dim()));
    let projected;
    let f = if q < f.dim() {
        projected = projection::gaussian_random_projection(f, &ProjectionSpec::new(q, config.seed))?;
        &projected
    } else if q == f.dim() {
        f
    } else {
        return Err(Error::Dimension(format!(
            "NLEEP projection size {q} exceeds d = {}",
            f.dim()
        )));
    };
    let z = covshrink::center_and_standardize(f)?;
    let gmm = GmmModel::fit(z.view(), k, config.seed, &config.gmm)?;
    let theta = gmm.responsibilities(z.view());
    Ok(NleepResult {
        value: leep_view(y, theta.view())?,
        converged: gmm.converged,
        iterations: gmm.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn entropy_cases() {
        let y = LabelVector::new(vec![0, 1, 0, 1]).unwrap();
        assert!((label_entropy(&y) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(label_entropy(&LabelVector::new(vec![0, 0, 0]).unwrap()), 0.0);
    }

    #[test]
    fn nce_perfect_and_constant() {
        let y = LabelVector::new(vec![0, 1, 2, 1, 0, 2, 2]).unwrap();
        assert_eq!(nce(&y, y.labels()).unwrap(), 0.0);
        let z = vec![0; 7];
        assert!((nce(&y, &z).unwrap() + label_entropy(&y)).abs() < 1e-14);
    }

    #[test]
    fn leep_perfect_predictor() {
        let y = LabelVector::new(vec![0, 1, 1, 0]).unwrap();
        // Source class 2 ↦ target 0, source class 0 ↦ target 1.
        let theta = SoftPredictionMatrix::one_hot(&[2, 0, 0, 2], 3).unwrap();
        assert_eq!(leep(&y, &theta).unwrap(), 0.0);
    }

    #[test]
    fn leep_uniform_is_minus_entropy() {
        let y = LabelVector::new(vec![0, 1, 1, 2, 2, 2]).unwrap();
        let theta = SoftPredictionMatrix::new(Array2::from_elem((6, 4), 0.25)).unwrap();
        assert!((leep(&y, &theta).unwrap() + label_entropy(&y)).abs() < 1e-12);
    }

    #[test]
    fn normalize_endpoints() {
        assert_eq!(normalize_metric(0.0, 0.7).unwrap(), 1.0);
        assert_eq!(normalize_metric(-0.7, 0.7).unwrap(), 0.0);
        assert!(matches!(normalize_metric(-0.1, 0.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn joint_sums_to_one() {
        let y = LabelVector::new(vec![0, 1, 1, 0, 1]).unwrap();
        let j = EmpiricalJoint::from_labels(&y, &[0, 0, 2, 1, 2], 3).unwrap();
        assert!((j.joint.sum() - 1.0).abs() < 1e-15);
        assert_eq!(j.marginal_z, array![0.4, 0.2, 0.4]);
    }

    #[test]
    fn gmm_single_component_is_moment_fit() {
        let x = array![[0.0, 1.0], [2.0, 3.0], [4.0, -1.0]];
        let g = GmmModel::fit(x.view(), 1, 0, &GmmConfig::default()).unwrap();
        assert!(g.converged);
        assert!((g.means[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((g.variances[(0, 0)] - 8.0 / 3.0).abs() < 1e-12);
        assert_eq!(g.weights, vec![1.0]);
    }

    #[test]
    fn gmm_rejects_too_many_components() {
        let x = array![[0.0], [1.0]];
        assert!(matches!(
            GmmModel::fit(x.view(), 3, 0, &GmmConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }
}
