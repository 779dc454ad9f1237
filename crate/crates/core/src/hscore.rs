//! The H-score `tr(Σ^f⁻¹ Σ^z)` and its shrinkage form
//! `H_α = (1−α) tr(Σ_α⁻¹ Σ^z)` with `Σ_α = (1−α)Σ^f + ασI`.
//!
//! Inputs are always centered and z-normalized first. The shrunk score then
//! takes one of two routes:
//!
//! * dense (`n ≥ d`): Cholesky of the d × d shrunk covariance, then
//!   `(1−α)/n · tr(Σ_α⁻¹ R Rᵀ)`;
//! * Woodbury (`n < d`): only an n × n system is factored,
//!   `W = nασ I + (1−α) F Fᵀ`, `G = F R`, and
//!   `H_α = (1−α)/(nασ) · (‖R‖_F² − (1−α) ⟨G, W⁻¹G⟩)`.
//!
//! The plain H-score uses a Moore-Penrose pseudo-inverse of `Σ^f`.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::covshrink::{self, ClassStats, LwMoments};
use crate::error::{Error, Result};
use crate::linalg::{self, Cholesky};
use crate::matrixio::{FeatureMatrix, LabelVector};
use crate::projection::{self, ProjectionSpec};
use crate::synthgen::{SyntheticModel, SyntheticSpec, REFERENCE_DRAW};

/// Eigenvalues below this fraction of the largest are dropped by the
/// pseudo-inverse.
pub const PINV_RCOND: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComputePath {
    Dense,
    Woodbury,
    Pseudoinverse,
}

impl ComputePath {
    pub fn as_str(self) -> &'static str {
        match self {
            ComputePath::Dense => "dense",
            ComputePath::Woodbury => "woodbury",
            ComputePath::Pseudoinverse => "pseudoinverse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HScoreResult {
    pub value: f64,
    pub alpha_used: f64,
    pub path: ComputePath,
    pub q_projected: Option<usize>,
    pub warnings: Vec<String>,
}

fn check_inputs(f: &FeatureMatrix, y: &LabelVector) -> Result<()> {
    if y.len() != f.n_samples() {
        return Err(Error::Validation(format!(
            "{} labels for {} feature rows",
            y.len(),
            f.n_samples()
        )));
    }
    if y.num_classes() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 classes, got {}",
            y.num_classes()
        )));
    }
    if f.n_samples() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 samples, got {}",
            f.n_samples()
        )));
    }
    Ok(())
}

/// `tr(pinv(Σ^f) R Rᵀ) / n` through the eigendecomposition of `Σ^f`.
pub fn pinv_trace(sigma_f: Array2<f64>, r: ArrayView2<'_, f64>, n: usize) -> Result<f64> {
    let (w, v) = linalg::sym_eigh(sigma_f)?;
    let top = w.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if top == 0.0 {
        return Ok(0.0);
    }
    let cut = PINV_RCOND * top;
    let proj = v.t().dot(&r);
    let total: f64 = proj
        .axis_iter(Axis(0))
        .zip(w.iter())
        .filter(|(_, &lam)| lam > cut)
        .map(|(row, &lam)| row.dot(&row) / lam)
        .sum();
    Ok(total / n as f64)
}

/// H-score with a pseudo-inverse feature covariance.
pub fn hscore_original(f: &FeatureMatrix, y: &LabelVector) -> Result<HScoreResult> {
    check_inputs(f, y)?;
    let z = covshrink::center_and_standardize(f)?;
    let stats = ClassStats::new(z.view(), y)?;
    let value = pinv_trace(covshrink::sample_covariance(z.view()), stats.r.view(), z.n_samples())?;
    Ok(HScoreResult {
        value,
        alpha_used: 0.0,
        path: ComputePath::Pseudoinverse,
        q_projected: None,
        warnings: Vec::new(),
    })
}

/// Dense evaluation `(1−α)/n · tr(Σ_α⁻¹ R Rᵀ)` on a prepared (centered) `F`.
pub fn shrunk_score_dense(f: ArrayView2<'_, f64>, r: ArrayView2<'_, f64>, alpha: f64, sigma: f64) -> Result<f64> {
    let n = f.nrows();
    let mut s = covshrink::sample_covariance(f);
    s *= 1.0 - alpha;
    let shift = alpha * sigma;
    s.diag_mut().mapv_inplace(|v| v + shift);
    let x = Cholesky::new(s.view())?.solve(r)?;
    Ok((1.0 - alpha) / n as f64 * (&r * &x).sum())
}

/// Woodbury evaluation on a prepared (centered) `F`; needs `α > 0`, `σ > 0`.
pub fn shrunk_score_woodbury(f: ArrayView2<'_, f64>, r: ArrayView2<'_, f64>, alpha: f64, sigma: f64) -> Result<f64> {
    let n = f.nrows() as f64;
    let ridge = n * alpha * sigma;
    if !(ridge > 0.0) {
        return Err(Error::Numerical(format!(
            "Woodbury system is singular (n·α·σ = {ridge})"
        )));
    }
    woodbury_with_gram(f, r, linalg::gram_rows(f), alpha, sigma)
}

fn woodbury_with_gram(
    f: ArrayView2<'_, f64>,
    r: ArrayView2<'_, f64>,
    gram: Array2<f64>,
    alpha: f64,
    sigma: f64,
) -> Result<f64> {
    let n = f.nrows() as f64;
    let ridge = n * alpha * sigma;
    let mut w = gram;
    w *= 1.0 - alpha;
    w.diag_mut().mapv_inplace(|v| v + ridge);
    let g = f.dot(&r);
    let x = Cholesky::new(w.view())?.solve(g.view())?;
    let r_norm2 = r.iter().map(|v| v * v).sum::<f64>();
    let inner = (&g * &x).sum();
    Ok((1.0 - alpha) / ridge * (r_norm2 - (1.0 - alpha) * inner))
}

/// Shrinkage H-score. `alpha` defaults to the Ledoit-Wolf intensity of the
/// normalized features; `projection` first maps F through a Gaussian random
/// projection.
pub fn hscore_shrunk(
    f: &FeatureMatrix,
    y: &LabelVector,
    alpha: Option<f64>,
    projection: Option<&ProjectionSpec>,
) -> Result<HScoreResult> {
    check_inputs(f, y)?;
    if let Some(a) = alpha {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::Validation(format!("alpha {a} outside [0,1]")));
        }
    }
    let projected;
    let (f, q_projected) = match projection {
        Some(spec) => {
            projected = projection::gaussian_random_projection(f, spec)?;
            (&projected, Some(spec.q))
        }
        None => (f, None),
    };
    let z = covshrink::center_and_standardize(f)?;
    let (n, d) = (z.n_samples(), z.dim());
    let x = z.view();
    let stats = ClassStats::new(x, y)?;
    let r = stats.r.view();
    let mut warnings = Vec::new();

    let pinv_fallback = |warnings: Vec<String>, alpha_used: f64| -> Result<HScoreResult> {
        let value = pinv_trace(covshrink::sample_covariance(x), r, n)?;
        Ok(HScoreResult {
            value: (1.0 - alpha_used) * value,
            alpha_used,
            path: ComputePath::Pseudoinverse,
            q_projected,
            warnings,
        })
    };

    if n < d {
        let gram = linalg::gram_rows(x);
        let moments = LwMoments::from_row_gram(&gram, d);
        let a = alpha.unwrap_or_else(|| moments.alpha());
        let sigma = moments.trace / d as f64;
        if a == 0.0 || sigma <= 0.0 {
            let msg = if a == 0.0 {
                "alpha = 0 with n < d leaves the Woodbury system singular; used the pseudo-inverse".to_string()
            } else {
                "all feature columns are constant; used the pseudo-inverse".to_string()
            };
            log::warn!("{msg}");
            warnings.push(msg);
            return pinv_fallback(warnings, a);
        }
        let value = woodbury_with_gram(x, r, gram, a, sigma)?;
        Ok(HScoreResult {
            value,
            alpha_used: a,
            path: ComputePath::Woodbury,
            q_projected,
            warnings,
        })
    } else {
        let cov = covshrink::sample_covariance(x);
        let a = alpha.unwrap_or_else(|| LwMoments::from_covariance(x, &cov).alpha());
        let sigma = cov.diag().sum() / d as f64;
        let mut s = cov;
        s *= 1.0 - a;
        let shift = a * sigma;
        s.diag_mut().mapv_inplace(|v| v + shift);
        match Cholesky::new(s.view()) {
            Ok(chol) => {
                let sol = chol.solve(r)?;
                let value = (1.0 - a) / n as f64 * (&r * &sol).sum();
                Ok(HScoreResult {
                    value,
                    alpha_used: a,
                    path: ComputePath::Dense,
                    q_projected,
                    warnings,
                })
            }
            Err(Error::Numerical(e)) => {
                let msg = format!("shrunk covariance not positive definite ({e}); used the pseudo-inverse");
                log::warn!("{msg}");
                warnings.push(msg);
                pinv_fallback(warnings, a)
            }
            Err(e) => Err(e),
        }
    }
}

/// Rows per chunk when accumulating a population reference.
const REFERENCE_CHUNK: usize = 20_000;

/// H-score of one large draw from the generator, used as the "true" value in
/// stability studies. Requires `n_ref ≥ 10·d`.
///
/// The draw is accumulated in chunks, so memory stays at O(d²) regardless of
/// `n_ref`. With `n_ref ≫ d` the covariance is full rank and the score is
/// invariant to per-column scaling, so no standardization pass is needed.
pub fn hscore_population_reference(spec: &SyntheticSpec, n_ref: usize) -> Result<f64> {
    if n_ref < 10 * spec.d {
        return Err(Error::Validation(format!(
            "population reference needs n_ref >= 10·d = {}, got {n_ref}",
            10 * spec.d
        )));
    }
    let model = SyntheticModel::new(spec)?;
    population_reference_for(&model, n_ref)
}

pub(crate) fn population_reference_for(model: &SyntheticModel, n_ref: usize) -> Result<f64> {
    let spec = model.spec();
    let d = spec.d;
    let c = spec.num_classes;
    let k = model.num_clusters();
    // Chunks start on a cluster boundary so sample i keeps label (i mod K) mod C.
    let chunk = REFERENCE_CHUNK.div_ceil(k) * k;

    let mut sum = ndarray::Array1::<f64>::zeros(d);
    let mut second = Array2::<f64>::zeros((d, d));
    let mut class_sums = Array2::<f64>::zeros((c, d));
    let mut counts = vec![0usize; c];
    let mut done = 0;
    let mut idx = 0u64;
    while done < n_ref {
        let len = chunk.min(n_ref - done);
        let take = len.max(c);
        let (fc, yc) = model.sample(take, REFERENCE_DRAW - idx)?;
        let xc = fc.view();
        let xc = xc.slice(ndarray::s![..len, ..]);
        sum += &xc.sum_axis(Axis(0));
        ndarray::linalg::general_mat_mul(1.0, &xc.t(), &xc, 1.0, &mut second);
        for (row, &l) in xc.axis_iter(Axis(0)).zip(yc.labels()) {
            let mut s = class_sums.row_mut(l);
            s += &row;
            counts[l] += 1;
        }
        done += len;
        idx += 1;
    }
    let n = n_ref as f64;
    let mean = &sum / n;
    let mut cov = second / n;
    for i in 0..d {
        for j in 0..d {
            cov[(i, j)] -= mean[i] * mean[j];
        }
    }
    let mut r = Array2::<f64>::zeros((d, c));
    for (cls, (s, &cnt)) in class_sums.axis_iter(Axis(0)).zip(&counts).enumerate() {
        if cnt == 0 {
            return Err(Error::InsufficientData(format!("class {cls} empty in reference draw")));
        }
        let m = &s / cnt as f64;
        let mut col = r.column_mut(cls);
        col.assign(&((&m - &mean) * (cnt as f64).sqrt()));
    }
    pinv_trace(cov, r.view(), n_ref)
}
