//! LogME: the log marginal likelihood of one-vs-rest targets under a Bayesian
//! linear head `y = F w + ε`, `w ~ N(0, α⁻¹I)`, `ε ~ N(0, β⁻¹I)`, with `(α, β)`
//! set by MacKay's fixed-point updates. A step that would lower the evidence is
//! shortened in log space first.
//!
//! One spectral decomposition of F is shared by all classes: a thin SVD when
//! `n ≤ d`, otherwise an eigendecomposition of `FᵀF`. Every per-class quantity
//! is then a sum over the `k` retained singular directions.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrixio::{FeatureMatrix, LabelVector};

/// Relative change of both α and β below which the iteration stops.
pub const LOGME_TOL: f64 = 1e-3;
pub const LOGME_MAX_ITER: usize = 100;
/// Singular values below this fraction of the largest are discarded.
const SVD_RCOND: f64 = 1e-10;
const EPS: f64 = 1e-5;
const BACKTRACK_STEPS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMEResult {
    /// Mean over classes of the per-sample log evidence.
    pub value: f64,
    pub iterations_per_class: Vec<usize>,
    pub converged: bool,
}

/// Evidence of each class after every update, starting from `α = β = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMETrace {
    pub result: LogMEResult,
    pub evidence: Vec<Vec<f64>>,
}

struct Spectrum {
    /// Squared singular values `σ_j`, retained directions only.
    sigma: Array1<f64>,
    /// `(u_jᵀ y_c)²`, k × C.
    proj2: Array2<f64>,
    /// `‖y_c‖²`.
    y_norm2: Vec<f64>,
    n: usize,
    d: usize,
}

fn one_vs_rest(y: &LabelVector) -> Array2<f64> {
    let mut t = Array2::<f64>::zeros((y.len(), y.num_classes()));
    for (i, &l) in y.labels().iter().enumerate() {
        t[(i, l)] = 1.0;
    }
    t
}

fn spectrum(f: &FeatureMatrix, y: &LabelVector) -> Result<Spectrum> {
    let (n, d) = (f.n_samples(), f.dim());
    let t = one_vs_rest(y);
    let y_norm2 = y.class_counts().iter().map(|&c| c as f64).collect();
    let (sigma, proj2) = if n <= d {
        let (u, s) = linalg::thin_svd_left(f.view())?;
        let smax = s.iter().fold(0.0f64, |m, &v| m.max(v));
        let keep: Vec<usize> = (0..s.len()).filter(|&j| s[j] > SVD_RCOND * smax).collect();
        let u = u.select(Axis(1), &keep);
        let p = u.t().dot(&t);
        (
            keep.iter().map(|&j| s[j] * s[j]).collect::<Array1<f64>>(),
            p.mapv(|v| v * v),
        )
    } else {
        let (w, v) = linalg::sym_eigh(linalg::gram_cols(f.view()))?;
        let wmax = w.iter().fold(0.0f64, |m, &x| m.max(x));
        // σ_j = s_j², so the singular-value cutoff squares.
        let keep: Vec<usize> = (0..w.len()).filter(|&j| w[j] > SVD_RCOND * SVD_RCOND * wmax).collect();
        let v = v.select(Axis(1), &keep);
        let sigma: Array1<f64> = keep.iter().map(|&j| w[j]).collect();
        // u_jᵀ y = v_jᵀ Fᵀ y / s_j
        let mut p = v.t().dot(&f.view().t().dot(&t)).mapv(|x| x * x);
        for (mut row, &s2) in p.axis_iter_mut(Axis(0)).zip(&sigma) {
            row /= s2;
        }
        (sigma, p)
    };
    Ok(Spectrum {
        sigma,
        proj2,
        y_norm2,
        n,
        d,
    })
}

struct ClassFit {
    evidence: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Per-sample log evidence at `(α, β)` together with `m2 = ‖m‖²`,
/// `res2 = ‖y − F m‖²` and `γ`.
fn evidence_terms(
    sigma: &Array1<f64>,
    p2: &[f64],
    y_norm2: f64,
    n: usize,
    d: usize,
    a: f64,
    b: f64,
) -> (f64, f64, f64, f64) {
    let k = sigma.len();
    let mut gamma = 0.0;
    let mut m2 = 0.0;
    let mut explained = 0.0;
    let mut shrink_res = 0.0;
    let mut logdet = 0.0;
    for (&s, &p) in sigma.iter().zip(p2) {
        let denom = a + b * s;
        gamma += b * s / denom;
        m2 += b * b * s * p / (denom * denom);
        explained += p;
        let frac = a / denom;
        shrink_res += p * frac * frac;
        logdet += denom.ln();
    }
    let res2 = shrink_res + (y_norm2 - explained).max(0.0);
    let (nf, df) = (n as f64, d as f64);
    let ev = 0.5 * df * a.ln() + 0.5 * nf * b.ln()
        - 0.5 * logdet
        - 0.5 * (df - k as f64) * a.ln()
        - 0.5 * b * res2
        - 0.5 * a * m2
        - 0.5 * nf * (2.0 * PI).ln();
    (ev / nf, m2, res2, gamma)
}

fn fit_class(sp: &Spectrum, c: usize) -> ClassFit {
    let p2: Vec<f64> = sp.proj2.column(c).to_vec();
    let yn = sp.y_norm2[c];
    let (mut a, mut b) = (1.0f64, 1.0f64);
    let (ev0, mut m2, mut res2, mut gamma) = evidence_terms(&sp.sigma, &p2, yn, sp.n, sp.d, a, b);
    let mut evidence = vec![ev0];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < LOGME_MAX_ITER {
        iterations += 1;
        let a_new = gamma / (m2 + EPS);
        let b_new = (sp.n as f64 - gamma) / (res2 + EPS);
        let da = (a_new - a).abs() / a;
        let db = (b_new - b).abs() / b;
        // The joint update can overshoot; shorten it in log space until the
        // evidence does not drop.
        let current = *evidence.last().expect("non-empty");
        let (la, lb) = ((a_new / a).ln(), (b_new / b).ln());
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..BACKTRACK_STEPS {
            let (ta, tb) = (a * (step * la).exp(), b * (step * lb).exp());
            let terms = evidence_terms(&sp.sigma, &p2, yn, sp.n, sp.d, ta, tb);
            if terms.0 >= current {
                next = Some((ta, tb, terms));
                break;
            }
            step *= 0.5;
        }
        let Some((ta, tb, (ev, m, r, g))) = next else {
            // No ascent direction left at this resolution: a stationary point.
            converged = true;
            break;
        };
        a = ta;
        b = tb;
        evidence.push(ev);
        (m2, res2, gamma) = (m, r, g);
        if da < LOGME_TOL && db < LOGME_TOL {
            converged = true;
            break;
        }
    }
    ClassFit {
        evidence,
        iterations,
        converged,
    }
}

fn check(f: &FeatureMatrix, y: &LabelVector) -> Result<()> {
    if y.len() != f.n_samples() {
        return Err(Error::Validation(format!(
            "{} labels for {} feature rows",
            y.len(),
            f.n_samples()
        )));
    }
    if y.num_classes() < 2 || f.n_samples() < 2 {
        return Err(Error::Degenerate(format!(
            "LogME needs at least 2 classes and 2 samples, got {} and {}",
            y.num_classes(),
            f.n_samples()
        )));
    }
    Ok(())
}

/// LogME with the per-class evidence trajectory.
pub fn logme_traced(f: &FeatureMatrix, y: &LabelVector) -> Result<LogMETrace> {
    check(f, y)?;
    let sp = spectrum(f, y)?;
    if sp.sigma.is_empty() {
        return Err(Error::Degenerate("feature matrix is zero".into()));
    }
    let fits: Vec<ClassFit> = (0..y.num_classes())
        .into_par_iter()
        .map(|c| fit_class(&sp, c))
        .collect();
    let finals: Vec<f64> = fits.iter().map(|f| *f.evidence.last().expect("non-empty")).collect();
    let value = finals.iter().sum::<f64>() / finals.len() as f64;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("LogME evidence is {value}")));
    }
    Ok(LogMETrace {
        result: LogMEResult {
            value,
            iterations_per_class: fits.iter().map(|f| f.iterations).collect(),
            converged: fits.iter().all(|f| f.converged),
        },
        evidence: fits.into_iter().map(|f| f.evidence).collect(),
    })
}

pub fn logme(f: &FeatureMatrix, y: &LabelVector) -> Result<LogMEResult> {
    Ok(logme_traced(f, y)?.result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: usize, d: usize) -> (FeatureMatrix, LabelVector) {
        let f = Array2::from_shape_fn((n, d), |(i, j)| {
            (((i * 31 + j * 17) % 23) as f64 - 11.0) / 7.0 + (i % 3) as f64
        });
        let y = LabelVector::new((0..n).map(|i| i % 3).collect()).unwrap();
        (FeatureMatrix::new(f).unwrap(), y)
    }

    #[test]
    fn both_decompositions_agree() {
        // An n > d instance through the eigen route and through a thin SVD.
        let (f, y) = data(12, 5);
        let tall = logme(&f, &y).unwrap();
        let svd = {
            let sp = {
                let t = one_vs_rest(&y);
                let (u, s) = linalg::thin_svd_left(f.view()).unwrap();
                let p = u.t().dot(&t).mapv(|v| v * v);
                Spectrum {
                    sigma: s.mapv(|v| v * v),
                    proj2: p,
                    y_norm2: y.class_counts().iter().map(|&c| c as f64).collect(),
                    n: 12,
                    d: 5,
                }
            };
            (0..3).map(|c| *fit_class(&sp, c).evidence.last().unwrap()).sum::<f64>() / 3.0
        };
        assert!((tall.value - svd).abs() < 1e-9, "{} vs {svd}", tall.value);
    }

    #[test]
    fn iterations_capped() {
        let (f, y) = data(30, 40);
        let r = logme(&f, &y).unwrap();
        assert!(r.value.is_finite());
        assert!(r
            .iterations_per_class
            .iter()
            .all(|&i| (1..=LOGME_MAX_ITER).contains(&i)));
    }
}
