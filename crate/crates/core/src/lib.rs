//! Transferability metrics over feature embeddings.
//!
//! The centerpiece is the shrinkage H-score ([`hscore::hscore_shrunk`]), which
//! replaces the sample feature covariance with a Ledoit-Wolf shrunk estimate and
//! evaluates the score either densely or through a Woodbury low-rank identity
//! when there are fewer samples than feature dimensions. Around it sit the
//! conditional-entropy metrics (NCE, LEEP, NLEEP and their entropy-normalized
//! forms), a LogME baseline, Gaussian random projection, synthetic data
//! generators, a correlation harness for meta-evaluation and the timing and
//! stability experiments.

// Links the system OpenBLAS that backs ndarray and ndarray-linalg.
extern crate openblas_src;

pub mod bench;
pub mod covshrink;
pub mod error;
pub mod evalharness;
pub mod hscore;
pub mod linalg;
pub mod logme;
pub mod matrixio;
pub mod projection;
pub mod pseudometrics;
pub mod rng;
pub mod scoring;
pub mod synthgen;

pub use error::{Error, Result};
pub use matrixio::{FeatureMatrix, LabelVector, SoftPredictionMatrix, TaskRecord};
