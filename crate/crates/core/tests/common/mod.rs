//! Independent reference implementations used by the integration tests.
//!
//! Everything here is written the slow, literal way (explicit loops, explicit
//! inverses) so it shares no code path with the library.
#![allow(dead_code)]

use ndarray::{Array2, ArrayView2};
use ndarray_linalg::{Eigh, Inverse, UPLO};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use xferscore::{FeatureMatrix, LabelVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_7e57)
}

pub fn gaussian(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(r))
}

/// Labels covering every class: the first `c` samples get `0..c`, the rest are
/// uniform.
pub fn labels(r: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<usize> {
    (0..n).map(|i| if i < c { i } else { r.random_range(0..c) }).collect()
}

/// Gaussian features with class-dependent mean shifts of size `shift`.
pub fn classed_instance(r: &mut ChaCha8Rng, n: usize, d: usize, c: usize, shift: f64) -> (FeatureMatrix, LabelVector) {
    let y = labels(r, n, c);
    let means = gaussian(r, c, d) * shift;
    let mut f = gaussian(r, n, d);
    for (i, &l) in y.iter().enumerate() {
        for j in 0..d {
            f[(i, j)] += means[(l, j)];
        }
    }
    (FeatureMatrix::new(f).unwrap(), LabelVector::new(y).unwrap())
}

/// Column z-scores with the population standard deviation; constant columns
/// are only centered.
pub fn zscore(f: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, d) = f.dim();
    let mut out = f.to_owned();
    for j in 0..d {
        let mut mean = 0.0;
        for i in 0..n {
            mean += f[(i, j)];
        }
        mean /= n as f64;
        let mut var = 0.0;
        for i in 0..n {
            var += (f[(i, j)] - mean).powi(2);
        }
        let sd = (var / n as f64).sqrt();
        let div = if sd < 1e-12 { 1.0 } else { sd };
        for i in 0..n {
            out[(i, j)] = (f[(i, j)] - mean) / div;
        }
    }
    out
}

/// `(1/n) Σ_i (f_i − f̄)(f_i − f̄)ᵀ` by a triple loop.
pub fn covariance(f: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, d) = f.dim();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += f[(i, j)] / n as f64;
        }
    }
    let mut s = Array2::<f64>::zeros((d, d));
    for i in 0..n {
        for a in 0..d {
            for b in 0..d {
                s[(a, b)] += (f[(i, a)] - mean[a]) * (f[(i, b)] - mean[b]);
            }
        }
    }
    s / n as f64
}

/// Covariance of the class means, `Σ_c (n_c/n)(f̄_c − f̄)(f̄_c − f̄)ᵀ`.
pub fn between_class(f: ArrayView2<'_, f64>, y: &[usize]) -> Array2<f64> {
    let (n, d) = f.dim();
    let c = y.iter().max().unwrap() + 1;
    let mut sums = Array2::<f64>::zeros((c, d));
    let mut counts = vec![0.0; c];
    let mut mean = vec![0.0; d];
    for i in 0..n {
        counts[y[i]] += 1.0;
        for j in 0..d {
            sums[(y[i], j)] += f[(i, j)];
            mean[j] += f[(i, j)] / n as f64;
        }
    }
    let mut z = Array2::<f64>::zeros((d, d));
    for k in 0..c {
        let w = counts[k] / n as f64;
        for a in 0..d {
            for b in 0..d {
                let da = sums[(k, a)] / counts[k] - mean[a];
                let db = sums[(k, b)] / counts[k] - mean[b];
                z[(a, b)] += w * da * db;
            }
        }
    }
    z
}

fn trace_of_product(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let d = a.nrows();
    let mut t = 0.0;
    for i in 0..d {
        for k in 0..d {
            t += a[(i, k)] * b[(k, i)];
        }
    }
    t
}

/// `(1−α) tr(Σ_α⁻¹ Σ^z)` with an explicitly inverted shrunk covariance,
/// on z-scored features.
pub fn shrunk_hscore_dense(f: ArrayView2<'_, f64>, y: &[usize], alpha: f64) -> f64 {
    let z = zscore(f);
    let d = z.ncols();
    // z is centered, so the covariance is a plain product.
    let sf = z.t().dot(&z) / z.nrows() as f64;
    let sigma = (0..d).map(|j| sf[(j, j)]).sum::<f64>() / d as f64;
    let mut sa = &sf * (1.0 - alpha);
    for j in 0..d {
        sa[(j, j)] += alpha * sigma;
    }
    let inv = sa.inv().expect("shrunk covariance invertible");
    (1.0 - alpha) * trace_of_product(&inv, &between_class(z.view(), y))
}

/// `tr(pinv(Σ^f) Σ^z)` with the pseudo-inverse built from an eigensolver.
pub fn hscore_pinv(f: ArrayView2<'_, f64>, y: &[usize]) -> f64 {
    let z = zscore(f);
    let sf = covariance(z.view());
    let (w, v) = sf.eigh(UPLO::Lower).unwrap();
    let top = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let d = sf.nrows();
    let mut pinv = Array2::<f64>::zeros((d, d));
    for k in 0..d {
        if w[k] > 1e-10 * top {
            for a in 0..d {
                for b in 0..d {
                    pinv[(a, b)] += v[(a, k)] * v[(b, k)] / w[k];
                }
            }
        }
    }
    trace_of_product(&pinv, &between_class(z.view(), y))
}

/// Ledoit-Wolf intensity by literal double loops over `f_i f_iᵀ − Σ^f`,
/// with `‖A‖² = tr(AAᵀ)/d`. `f` must already be centered.
pub fn ledoit_wolf_literal(f: ArrayView2<'_, f64>) -> f64 {
    let (n, d) = f.dim();
    let mut s = Array2::<f64>::zeros((d, d));
    for i in 0..n {
        for a in 0..d {
            for b in 0..d {
                s[(a, b)] += f[(i, a)] * f[(i, b)] / n as f64;
            }
        }
    }
    let mu = (0..d).map(|j| s[(j, j)]).sum::<f64>() / d as f64;
    let mut num = 0.0;
    for i in 0..n {
        let mut norm = 0.0;
        for a in 0..d {
            for b in 0..d {
                norm += (f[(i, a)] * f[(i, b)] - s[(a, b)]).powi(2);
            }
        }
        num += norm / d as f64;
    }
    num /= (n * n) as f64;
    let mut den = 0.0;
    for a in 0..d {
        for b in 0..d {
            let t = if a == b { mu } else { 0.0 };
            den += (s[(a, b)] - t).powi(2);
        }
    }
    den /= d as f64;
    if den < 1e-18 {
        return 1.0;
    }
    (num / den).clamp(0.0, 1.0)
}

/// Plug-in `−H(Y|Z)` by a double loop over the contingency table.
pub fn neg_cond_entropy(y: &[usize], z: &[usize]) -> f64 {
    let n = y.len() as f64;
    let cy = y.iter().max().unwrap() + 1;
    let cz = z.iter().max().unwrap() + 1;
    let mut table = vec![vec![0.0; cy]; cz];
    for (&a, &b) in y.iter().zip(z) {
        table[b][a] += 1.0;
    }
    let mut total = 0.0;
    for row in &table {
        let pz: f64 = row.iter().sum::<f64>() / n;
        for &cnt in row {
            if cnt > 0.0 {
                let p = cnt / n;
                total += p * (p / pz).ln();
            }
        }
    }
    total
}

pub fn entropy(y: &[usize]) -> f64 {
    let n = y.len() as f64;
    let c = y.iter().max().unwrap() + 1;
    let mut counts = vec![0.0; c];
    for &l in y {
        counts[l] += 1.0;
    }
    counts
        .iter()
        .filter(|&&k| k > 0.0)
        .map(|&k| -(k / n) * (k / n).ln())
        .sum()
}

/// Pearson r from raw sums.
pub fn pearson_sums(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Ranks by counting: `1 + #less + (#equal − 1)/2`.
pub fn ranks_by_counting(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Random probability rows.
pub fn soft_rows(r: &mut ChaCha8Rng, n: usize, k: usize) -> Array2<f64> {
    let mut m = Array2::from_shape_simple_fn((n, k), || r.random::<f64>() + 1e-3);
    for mut row in m.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    m
}
