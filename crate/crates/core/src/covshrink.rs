//! Covariance estimation with Ledoit-Wolf shrinkage toward a scaled identity,
//! plus the class-conditional statistics the H-score needs.
//!
//! All covariances use the population convention (divide by `n`), so that on
//! centered data the sample law of total covariance holds exactly:
//! `Σ^f = Σ_c (n_c / n) Σ^{f|c} + Σ^z`.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrixio::{FeatureMatrix, LabelVector};

/// Columns with a standard deviation below this are treated as constant.
pub const CONSTANT_COLUMN_STD: f64 = 1e-12;

/// Centers every column and scales it to unit population standard deviation.
/// Constant columns are centered and left unscaled, so they become zero.
pub fn center_and_standardize(f: &FeatureMatrix) -> Result<FeatureMatrix> {
    let n = f.n_samples();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "standardization needs at least 2 samples, got {n}"
        )));
    }
    let mut out = f.as_array().to_owned();
    let mean = out.mean_axis(Axis(0)).expect("n >= 2");
    out -= &mean;
    let var = out.map_axis(Axis(0), |c| c.dot(&c) / n as f64);
    for (mut col, v) in out.axis_iter_mut(Axis(1)).zip(var.iter()) {
        let sd = v.sqrt();
        if sd >= CONSTANT_COLUMN_STD {
            col /= sd;
        }
    }
    Ok(FeatureMatrix::from_trusted(out))
}

/// `(1/n) FᵀF` for a centered `F`, exactly symmetric.
pub fn sample_covariance(f: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = f.nrows() as f64;
    let mut s = linalg::gram_cols(f);
    s /= n;
    for i in 0..s.nrows() {
        for j in 0..i {
            s[(j, i)] = s[(i, j)];
        }
    }
    s
}

/// The sufficient statistics of the Ledoit-Wolf intensity.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LwMoments {
    pub n: usize,
    pub d: usize,
    /// `Σ_i ‖f_i‖⁴`
    pub sum_norm4: f64,
    /// `tr(Σ^f)`
    pub trace: f64,
    /// `tr(Σ^f Σ^f) = ‖Σ^f‖_F²`
    pub trace_sq: f64,
}

impl LwMoments {
    /// From the row Gram matrix `K = F Fᵀ`, using `‖FᵀF‖_F = ‖FFᵀ‖_F`.
    pub fn from_row_gram(gram: &Array2<f64>, d: usize) -> Self {
        let n = gram.nrows();
        let nf = n as f64;
        let diag = gram.diag();
        Self {
            n,
            d,
            sum_norm4: diag.iter().map(|v| v * v).sum(),
            trace: diag.sum() / nf,
            trace_sq: gram.iter().map(|v| v * v).sum::<f64>() / (nf * nf),
        }
    }

    /// From the covariance `Σ^f` and the data it came from.
    pub fn from_covariance(f: ArrayView2<'_, f64>, sigma_f: &Array2<f64>) -> Self {
        let (n, d) = f.dim();
        Self {
            n,
            d,
            sum_norm4: f
                .axis_iter(Axis(0))
                .map(|r| {
                    let s = r.dot(&r);
                    s * s
                })
                .sum(),
            trace: sigma_f.diag().sum(),
            trace_sq: sigma_f.iter().map(|v| v * v).sum(),
        }
    }

    /// Optimal shrinkage intensity, clipped to `[0, 1]`.
    ///
    /// Streaming form of the numerator:
    /// `Σ_i ‖f_i f_iᵀ − Σ^f‖² = (1/d)[Σ_i ‖f_i‖⁴ − n tr(Σ^f Σ^f)]`, with the
    /// normalized norm `‖A‖² = tr(AAᵀ)/d`.
    pub fn alpha(&self) -> f64 {
        let n = self.n as f64;
        let d = self.d as f64;
        let mu = self.trace / d;
        let denom = (self.trace_sq - self.trace * self.trace / d) / d;
        // Relative floor so the isotropic case is detected at any scale.
        if denom <= 1e-18_f64.max(1e-14 * mu * mu) {
            return 1.0;
        }
        let numer = (self.sum_norm4 - n * self.trace_sq) / (d * n * n);
        (numer / denom).clamp(0.0, 1.0)
    }
}

/// Ledoit-Wolf optimal shrinkage intensity `α*` for a centered `F`.
pub fn ledoit_wolf_alpha(f: &FeatureMatrix) -> Result<f64> {
    if f.n_samples() < 2 {
        return Err(Error::Degenerate(format!(
            "shrinkage intensity needs at least 2 samples, got {}",
            f.n_samples()
        )));
    }
    Ok(ledoit_wolf_alpha_unchecked(f.view()))
}

/// As [`ledoit_wolf_alpha`] without the sample-count guard.
pub fn ledoit_wolf_alpha_unchecked(f: ArrayView2<'_, f64>) -> f64 {
    let (n, d) = f.dim();
    let moments = if n < d {
        LwMoments::from_row_gram(&linalg::gram_rows(f), d)
    } else {
        LwMoments::from_covariance(f, &sample_covariance(f))
    };
    moments.alpha()
}

/// Class counts, class means, and `R = [√n_1 f̄_1, …, √n_C f̄_C]`.
#[derive(Debug, Clone)]
pub struct ClassStats {
    pub class_counts: Vec<usize>,
    /// C × d.
    pub class_means: Array2<f64>,
    /// d × C; column c is `√n_c (f̄_c − f̄)`.
    pub r: Array2<f64>,
    pub global_mean: Array1<f64>,
}

impl ClassStats {
    pub fn new(f: ArrayView2<'_, f64>, y: &LabelVector) -> Result<Self> {
        let (n, d) = f.dim();
        if y.len() != n {
            return Err(Error::Validation(format!("{} labels for {n} rows", y.len())));
        }
        let c = y.num_classes();
        let counts = y.class_counts();
        let mut sums = Array2::<f64>::zeros((c, d));
        for (row, &label) in f.axis_iter(Axis(0)).zip(y.labels()) {
            let mut s = sums.row_mut(label);
            s += &row;
        }
        let global_mean = f.mean_axis(Axis(0)).expect("n >= 1");
        let mut class_means = sums;
        for (mut m, &cnt) in class_means.axis_iter_mut(Axis(0)).zip(&counts) {
            m /= cnt as f64;
        }
        let mut r = Array2::<f64>::zeros((d, c));
        for (k, (m, &cnt)) in class_means.axis_iter(Axis(0)).zip(&counts).enumerate() {
            let w = (cnt as f64).sqrt();
            let mut col = r.column_mut(k);
            col.assign(&(&m - &global_mean));
            col *= w;
        }
        Ok(Self {
            class_counts: counts,
            class_means,
            r,
            global_mean,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.class_counts.iter().sum()
    }

    /// `Σ^z = (1/n) R Rᵀ`, the covariance of the class-conditional means.
    pub fn between_class_covariance(&self) -> Array2<f64> {
        let mut z = self.r.dot(&self.r.t());
        z /= self.num_samples() as f64;
        z
    }
}

/// Everything needed to form `Σ_α^f = (1−α)Σ^f + ασI`.
#[derive(Debug, Clone)]
pub struct ShrunkCovarianceModel {
    pub sigma_f: Array2<f64>,
    pub alpha: f64,
    /// Average variance `tr(Σ^f)/d`.
    pub sigma_bar: f64,
    pub class_stats: ClassStats,
}

impl ShrunkCovarianceModel {
    /// Fits on a centered `F`. `alpha` defaults to the Ledoit-Wolf intensity.
    pub fn fit(f: &FeatureMatrix, y: &LabelVector, alpha: Option<f64>) -> Result<Self> {
        let sigma_f = sample_covariance(f.view());
        let alpha = match alpha {
            Some(a) if (0.0..=1.0).contains(&a) => a,
            Some(a) => return Err(Error::Validation(format!("alpha {a} outside [0,1]"))),
            None => {
                if f.n_samples() < 2 {
                    return Err(Error::Degenerate("shrinkage intensity needs at least 2 samples".into()));
                }
                LwMoments::from_covariance(f.view(), &sigma_f).alpha()
            }
        };
        let sigma_bar = sigma_f.diag().sum() / f.dim() as f64;
        Ok(Self {
            sigma_f,
            alpha,
            sigma_bar,
            class_stats: ClassStats::new(f.view(), y)?,
        })
    }

    pub fn shrunk_covariance(&self) -> Array2<f64> {
        shrunk_covariance(self)
    }
}

/// `(1−α)Σ^f + ασI_d`.
pub fn shrunk_covariance(model: &ShrunkCovarianceModel) -> Array2<f64> {
    let mut s = &model.sigma_f * (1.0 - model.alpha);
    let shift = model.alpha * model.sigma_bar;
    s.diag_mut().mapv_inplace(|v| v + shift);
    s
}

/// Per-class covariances `(1/n_c) Σ_{i∈c} (f_i − f̄_c)(f_i − f̄_c)ᵀ`.
pub fn class_conditional_covariances(f: ArrayView2<'_, f64>, y: &LabelVector) -> Result<Vec<Array2<f64>>> {
    let stats = ClassStats::new(f, y)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); y.num_classes()];
    for (i, &l) in y.labels().iter().enumerate() {
        members[l].push(i);
    }
    Ok(members
        .iter()
        .zip(stats.class_means.axis_iter(Axis(0)))
        .map(|(rows, mean)| {
            let mut block = f.select(Axis(0), rows);
            block -= &mean;
            let mut cov = block.t().dot(&block);
            cov /= rows.len() as f64;
            cov
        })
        .collect())
}

/// `E[Σ^{f|Y}] = Σ_c (n_c/n) Σ^{f|c}`.
pub fn expected_within_covariance(covs: &[Array2<f64>], counts: &[usize]) -> Array2<f64> {
    let n: usize = counts.iter().sum();
    let d = covs.first().map_or(0, |c| c.nrows());
    covs.iter()
        .zip(counts)
        .fold(Array2::zeros((d, d)), |acc, (c, &k)| acc + c * (k as f64 / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fm(a: Array2<f64>) -> FeatureMatrix {
        FeatureMatrix::new(a).unwrap()
    }

    #[test]
    fn standardize_two_points() {
        let z = center_and_standardize(&fm(array![[1.0], [3.0]])).unwrap();
        assert_eq!(z.as_array(), &array![[-1.0], [1.0]]);
    }

    #[test]
    fn standardize_constant_column_becomes_zero() {
        let z = center_and_standardize(&fm(array![[5.0, 1.0], [5.0, 2.0], [5.0, 4.0]])).unwrap();
        assert!(z.as_array().column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardize_needs_two_rows() {
        assert!(matches!(
            center_and_standardize(&fm(array![[1.0, 2.0]])),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn covariance_hand_cases() {
        let s = sample_covariance(array![[1.0, 0.0], [-1.0, 0.0]].view());
        assert_eq!(s, array![[1.0, 0.0], [0.0, 0.0]]);
        let d = 4;
        let f = Array2::<f64>::eye(d) * 2.0;
        let s = sample_covariance(f.view());
        assert_eq!(s, Array2::<f64>::eye(d) * (4.0 / d as f64));
    }

    #[test]
    fn alpha_degenerate_single_row() {
        assert_eq!(ledoit_wolf_alpha_unchecked(array![[0.0, 0.0, 0.0]].view()), 1.0);
        assert!(ledoit_wolf_alpha(&fm(array![[0.0, 1.0]])).is_err());
    }

    #[test]
    fn alpha_isotropic_is_one() {
        // Rows ±e_j give Σ^f = (2/2d)·I exactly.
        let d = 6;
        let mut f = Array2::<f64>::zeros((2 * d, d));
        for j in 0..d {
            f[(2 * j, j)] = 1.0;
            f[(2 * j + 1, j)] = -1.0;
        }
        assert_eq!(ledoit_wolf_alpha_unchecked(f.view()), 1.0);
    }

    #[test]
    fn gram_and_covariance_moments_agree() {
        let f = Array2::from_shape_fn((7, 11), |(i, j)| ((i * 13 + j * 7) % 17) as f64 - 8.0);
        let a = LwMoments::from_row_gram(&linalg::gram_rows(f.view()), 11).alpha();
        let b = LwMoments::from_covariance(f.view(), &sample_covariance(f.view())).alpha();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn shrunk_covariance_endpoints() {
        let f = fm(array![[1.0, 2.0], [-1.0, 0.5], [0.0, -2.5]]);
        let y = LabelVector::new(vec![0, 1, 1]).unwrap();
        let m0 = ShrunkCovarianceModel::fit(&f, &y, Some(0.0)).unwrap();
        assert_eq!(m0.shrunk_covariance(), m0.sigma_f);
        let m1 = ShrunkCovarianceModel::fit(&f, &y, Some(1.0)).unwrap();
        assert_eq!(m1.shrunk_covariance(), Array2::<f64>::eye(2) * m1.sigma_bar);
        assert!(ShrunkCovarianceModel::fit(&f, &y, Some(1.5)).is_err());
    }

    #[test]
    fn one_sample_per_class_has_zero_within() {
        let f = array![[1.0, 0.0], [0.0, 2.0], [-1.0, -2.0]];
        let y = LabelVector::new(vec![0, 1, 2]).unwrap();
        let covs = class_conditional_covariances(f.view(), &y).unwrap();
        assert!(covs.iter().all(|c| c.iter().all(|&v| v == 0.0)));
        let stats = ClassStats::new(f.view(), &y).unwrap();
        let sz = stats.between_class_covariance();
        let sf = sample_covariance(f.view());
        for (a, b) in sz.iter().zip(sf.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn class_stats_columns() {
        let f = array![[1.0, 1.0], [3.0, 1.0], [-4.0, -2.0]];
        let y = LabelVector::new(vec![0, 0, 1]).unwrap();
        let s = ClassStats::new(f.view(), &y).unwrap();
        assert_eq!(s.class_counts, vec![2, 1]);
        assert_eq!(s.global_mean, array![0.0, 0.0]);
        let root2 = 2f64.sqrt();
        assert!((s.r[(0, 0)] - 2.0 * root2).abs() < 1e-15);
        assert!((s.r[(1, 1)] + 2.0).abs() < 1e-15);
    }
}
