//! Gaussian random projection `F̂ = F V` with `V_ij ~ N(0, 1/q)`.
//!
//! Column `j` of `V` is drawn from its own labeled stream `(seed, j)`, so the
//! matrix does not depend on generation order.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrixio::FeatureMatrix;
use crate::rng;

/// Projection size used for source-model selection unless the candidates are
/// narrower.
pub const DEFAULT_SMS_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub q: usize,
    pub seed: u64,
}

impl ProjectionSpec {
    pub fn new(q: usize, seed: u64) -> Self {
        Self { q, seed }
    }
}

/// The d × q projection matrix for `spec`.
pub fn projection_matrix(d: usize, spec: &ProjectionSpec) -> Result<Array2<f64>> {
    if spec.q == 0 || spec.q > d {
        return Err(Error::Dimension(format!(
            "projection dimension {} must be in 1..={d}",
            spec.q
        )));
    }
    let scale = 1.0 / (spec.q as f64).sqrt();
    let mut v = Array2::<f64>::zeros((d, spec.q));
    for (j, mut col) in v.columns_mut().into_iter().enumerate() {
        let mut r = rng::stream(spec.seed, "projection", j as u64);
        for x in col.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut r);
            *x = z * scale;
        }
    }
    Ok(v)
}

pub fn gaussian_random_projection(f: &FeatureMatrix, spec: &ProjectionSpec) -> Result<FeatureMatrix> {
    let v = projection_matrix(f.dim(), spec)?;
    Ok(FeatureMatrix::from_trusted(f.view().dot(&v)))
}

/// Shared projection size for comparing candidates of different widths:
/// the narrowest embedding, capped at [`DEFAULT_SMS_DIM`].
pub fn select_q(dims: &[usize]) -> Option<usize> {
    dims.iter().copied().min().map(|m| m.min(DEFAULT_SMS_DIM))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_maps_to_zero() {
        let f = FeatureMatrix::new(Array2::zeros((4, 10))).unwrap();
        let p = gaussian_random_projection(&f, &ProjectionSpec::new(3, 1)).unwrap();
        assert_eq!(p.as_array(), &Array2::<f64>::zeros((4, 3)));
    }

    #[test]
    fn deterministic() {
        let f = FeatureMatrix::new(Array2::from_shape_fn((5, 12), |(i, j)| (i + 2 * j) as f64)).unwrap();
        let spec = ProjectionSpec::new(6, 42);
        let a = gaussian_random_projection(&f, &spec).unwrap();
        let b = gaussian_random_projection(&f, &spec).unwrap();
        assert_eq!(a, b);
        let c = gaussian_random_projection(&f, &ProjectionSpec::new(6, 43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn q_larger_than_d_rejected() {
        let f = FeatureMatrix::new(Array2::zeros((2, 3))).unwrap();
        assert!(matches!(
            gaussian_random_projection(&f, &ProjectionSpec::new(4, 0)),
            Err(Error::Dimension(_))
        ));
        assert!(gaussian_random_projection(&f, &ProjectionSpec::new(0, 0)).is_err());
    }

    #[test]
    fn entries_have_variance_one_over_q() {
        let v = projection_matrix(400, &ProjectionSpec::new(100, 5)).unwrap();
        let n = v.len() as f64;
        let mean = v.sum() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.005);
        assert!((var * 100.0 - 1.0).abs() < 0.05, "var*q = {}", var * 100.0);
    }

    #[test]
    fn q_selection() {
        assert_eq!(select_q(&[4096, 2048, 1024]), Some(128));
        assert_eq!(select_q(&[64, 512]), Some(64));
        assert_eq!(select_q(&[]), None);
    }
}
