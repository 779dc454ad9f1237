//! Synthetic classification data in the style of Guyon's hypercube generator.
//!
//! Each class owns `clusters_per_class` Gaussian clusters centred on distinct
//! vertices of the hypercube `{−class_sep, +class_sep}^{d_informative}`. With
//! covariance mixing enabled every cluster's standard-normal draws are
//! multiplied by its own random matrix with `U(−1, 1)` entries before the
//! centroid is added, as the reference generator does. The remaining
//! `d − d_informative` columns are i.i.d. standard-normal noise.
//!
//! A [`SyntheticModel`] fixes the distribution (centroids, mixing matrices)
//! from the seed of its [`SyntheticSpec`]; independent draws of any size come from
//! [`SyntheticModel::sample`] with a draw index, so small samples and the large
//! population reference share one distribution.

use std::collections::HashSet;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrixio::{FeatureMatrix, LabelVector};
use crate::rng;

/// Draw index reserved for population references.
pub const REFERENCE_DRAW: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub d_informative: usize,
    pub num_classes: usize,
    pub class_sep: f64,
    pub clusters_per_class: usize,
    pub covariance_mixing: bool,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Spec with the generator defaults: two clusters per class and random
    /// per-cluster covariance.
    pub fn new(n: usize, d: usize, d_informative: usize, num_classes: usize, class_sep: f64, seed: u64) -> Self {
        Self {
            n,
            d,
            d_informative,
            num_classes,
            class_sep,
            clusters_per_class: 2,
            covariance_mixing: true,
            seed,
        }
    }

    pub fn with_clusters_per_class(mut self, k: usize) -> Self {
        self.clusters_per_class = k;
        self
    }

    pub fn with_covariance_mixing(mut self, on: bool) -> Self {
        self.covariance_mixing = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Spec(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.d_informative == 0 || self.d_informative > self.d {
            return Err(Error::Spec(format!(
                "d_informative {} must be in 1..={}",
                self.d_informative, self.d
            )));
        }
        if self.n < self.num_classes {
            return Err(Error::Spec(format!(
                "n {} smaller than class count {}",
                self.n, self.num_classes
            )));
        }
        if self.clusters_per_class == 0 {
            return Err(Error::Spec("clusters_per_class must be positive".into()));
        }
        if !self.class_sep.is_finite() || self.class_sep < 0.0 {
            return Err(Error::Spec(format!(
                "class_sep {} must be finite and non-negative",
                self.class_sep
            )));
        }
        let clusters = self.num_classes * self.clusters_per_class;
        if self.d_informative < 64 && (1u64 << self.d_informative) < clusters as u64 {
            return Err(Error::Spec(format!(
                "{clusters} clusters do not fit on the vertices of a {}-cube",
                self.d_informative
            )));
        }
        Ok(())
    }
}

/// The fixed distribution behind a [`SyntheticSpec`].
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    spec: SyntheticSpec,
    /// clusters × d_informative
    centroids: Array2<f64>,
    mixing: Vec<Array2<f64>>,
}

impl SyntheticModel {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let clusters = spec.num_classes * spec.clusters_per_class;
        let di = spec.d_informative;
        let mut r = rng::stream(spec.seed, "synth-structure", 0);

        let mut seen: HashSet<Vec<bool>> = HashSet::new();
        let mut centroids = Array2::<f64>::zeros((clusters, di));
        let mut k = 0;
        while k < clusters {
            let vertex: Vec<bool> = (0..di).map(|_| r.random::<bool>()).collect();
            if seen.insert(vertex.clone()) {
                for (c, &b) in centroids.row_mut(k).iter_mut().zip(&vertex) {
                    *c = if b { spec.class_sep } else { -spec.class_sep };
                }
                k += 1;
            }
        }
        let mixing = if spec.covariance_mixing {
            (0..clusters)
                .map(|_| Array2::from_shape_simple_fn((di, di), || r.random_range(-1.0..1.0)))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            spec: spec.clone(),
            centroids,
            mixing,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn num_clusters(&self) -> usize {
        self.centroids.nrows()
    }

    /// Draws `n` samples. Sample `i` belongs to cluster `i mod K` and class
    /// `(i mod K) mod C`, which keeps classes balanced to within one sample.
    pub fn sample(&self, n: usize, draw: u64) -> Result<(FeatureMatrix, LabelVector)> {
        let c = self.spec.num_classes;
        if n < c {
            return Err(Error::Spec(format!("cannot draw {n} samples for {c} classes")));
        }
        let d = self.spec.d;
        let di = self.spec.d_informative;
        let k = self.num_clusters();
        let mut r = rng::stream(self.spec.seed, "synth-samples", draw);
        let mut x = Array2::<f64>::zeros((n, d));
        for v in x.iter_mut() {
            *v = StandardNormal.sample(&mut r);
        }

        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for i in 0..n {
            members[i % k].push(i);
        }
        for (cluster, rows) in members.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let centroid = self.centroids.row(cluster);
            if self.mixing.is_empty() {
                for &i in rows {
                    let mut inf = x.slice_mut(s![i, ..di]);
                    inf += &centroid;
                }
            } else {
                let block = x.slice(s![.., ..di]).select(Axis(0), rows);
                let mut mixed = block.dot(&self.mixing[cluster]);
                mixed += &centroid;
                for (&i, row) in rows.iter().zip(mixed.axis_iter(Axis(0))) {
                    x.slice_mut(s![i, ..di]).assign(&row);
                }
            }
        }
        let labels = (0..n).map(|i| (i % k) % c).collect();
        Ok((FeatureMatrix::from_trusted(x), LabelVector::new(labels)?))
    }
}

/// Draws `spec.n` samples from the distribution fixed by `spec.seed`.
pub fn make_classification(spec: &SyntheticSpec) -> Result<(FeatureMatrix, LabelVector)> {
    SyntheticModel::new(spec)?.sample(spec.n, 0)
}

fn members_by_class(y: &LabelVector) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); y.num_classes()];
    for (i, &l) in y.labels().iter().enumerate() {
        members[l].push(i);
    }
    members
}

/// Random subset of `classes_to_keep` classes with `per_class` random samples
/// each. Rows keep their original relative order; labels are remapped to
/// `0..classes_to_keep`.
pub fn subsample_classes(
    f: &FeatureMatrix,
    y: &LabelVector,
    classes_to_keep: usize,
    per_class: usize,
    seed: u64,
) -> Result<(FeatureMatrix, LabelVector)> {
    if classes_to_keep == 0 || classes_to_keep > y.num_classes() {
        return Err(Error::InsufficientData(format!(
            "asked for {classes_to_keep} classes, pool has {}",
            y.num_classes()
        )));
    }
    let members = members_by_class(y);
    let mut classes: Vec<usize> = (0..y.num_classes()).collect();
    classes.shuffle(&mut rng::stream(seed, "subsample-classes", 0));
    classes.truncate(classes_to_keep);

    let mut rows = Vec::with_capacity(classes_to_keep * per_class);
    for &c in &classes {
        let pool = &members[c];
        if pool.len() < per_class {
            return Err(Error::InsufficientData(format!(
                "class {c} has {} samples, {per_class} requested",
                pool.len()
            )));
        }
        let mut pool = pool.clone();
        pool.shuffle(&mut rng::stream(seed, "subsample-rows", c as u64));
        rows.extend_from_slice(&pool[..per_class]);
    }
    rows.sort_unstable();
    Ok((f.select_rows(&rows), y.select(&rows)?))
}

/// Binary task from two random classes: `n₁` uniform in `n_minority_range`
/// from the first and `round(ratio · n₁)` from the second. Labels are 0 for the
/// first class and 1 for the second.
pub fn make_imbalanced_pair(
    f: &FeatureMatrix,
    y: &LabelVector,
    n_minority_range: (usize, usize),
    ratio: f64,
    seed: u64,
) -> Result<(FeatureMatrix, LabelVector)> {
    let (lo, hi) = n_minority_range;
    if lo == 0 || lo > hi {
        return Err(Error::Validation(format!("invalid minority range ({lo}, {hi})")));
    }
    if !(ratio >= 1.0) || !ratio.is_finite() {
        return Err(Error::Validation(format!("ratio {ratio} must be finite and >= 1")));
    }
    if y.num_classes() < 2 {
        return Err(Error::InsufficientData("need at least two classes".into()));
    }
    let mut r = rng::stream(seed, "imbalanced-pair", 0);
    let members = members_by_class(y);
    let mut classes: Vec<usize> = (0..y.num_classes()).collect();
    classes.shuffle(&mut r);
    let (first, second) = (classes[0], classes[1]);
    let n1 = r.random_range(lo..=hi);
    let n2 = (ratio * n1 as f64).round() as usize;
    if members[first].len() < n1 || members[second].len() < n2 {
        return Err(Error::InsufficientData(format!(
            "classes have {} and {} samples, need {n1} and {n2}",
            members[first].len(),
            members[second].len()
        )));
    }
    let mut a = members[first].clone();
    let mut b = members[second].clone();
    a.shuffle(&mut r);
    b.shuffle(&mut r);
    let rows: Vec<usize> = a[..n1].iter().chain(&b[..n2]).copied().collect();
    let labels = std::iter::repeat_n(0, n1).chain(std::iter::repeat_n(1, n2)).collect();
    Ok((f.select_rows(&rows), LabelVector::new(labels)?))
}

/// Hold-out accuracy of a nearest-class-mean classifier: a cheap stand-in for
/// a fine-tuned head when a synthetic bundle needs an accuracy column.
pub fn holdout_centroid_accuracy(f: &FeatureMatrix, y: &LabelVector, seed: u64) -> Result<f64> {
    let members = members_by_class(y);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, rows) in members.iter().enumerate() {
        let mut rows = rows.clone();
        rows.shuffle(&mut rng::stream(seed, "holdout-split", c as u64));
        let cut = rows.len().div_ceil(2);
        if cut == rows.len() {
            return Err(Error::InsufficientData(format!(
                "class {c} has too few samples to split"
            )));
        }
        train.extend_from_slice(&rows[..cut]);
        test.extend_from_slice(&rows[cut..]);
    }
    let x = f.view();
    let d = f.dim();
    let mut means = Array2::<f64>::zeros((y.num_classes(), d));
    let mut counts = vec![0usize; y.num_classes()];
    for &i in &train {
        let l = y.labels()[i];
        let mut m = means.row_mut(l);
        m += &x.row(i);
        counts[l] += 1;
    }
    for (mut m, &k) in means.axis_iter_mut(Axis(0)).zip(&counts) {
        m /= k as f64;
    }
    let correct = test
        .iter()
        .filter(|&&i| {
            let row = x.row(i);
            let best = means
                .axis_iter(Axis(0))
                .map(|m| (&m - &row).mapv(|v| v * v).sum())
                .enumerate()
                .fold(
                    (0, f64::INFINITY),
                    |b, (c, dist)| if dist < b.1 { (c, dist) } else { b },
                )
                .0;
            best == y.labels()[i]
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}
