//! Neural-collapse diagnostics and last-layer-retraining experiments on
//! precomputed feature embeddings.
//!
//! The crate provides:
//!
//! * a manifest-driven embedding dataset format with group/class labels
//!   and deterministic group-ratio subsampling ([`dataset`]);
//! * matrix-free within-class and between-class covariance operators with
//!   exact low-rank and iterative pseudo-inverse application ([`linalg`]);
//! * exact and streaming stochastic estimation of the collapse metric
//!   `tr(Σ_within Σ_between^†) / |Y|`, plus its memory accounting ([`nc1`]);
//! * class/group balancing plans and loss-based example weighting
//!   ([`balancing`]);
//! * weighted logistic last-layer retraining with worst-group-accuracy
//!   evaluation and margin metrics ([`retrain`]);
//! * a hard-margin SVM reference solver and the directional-error trace
//!   of gradient descent toward it ([`svm`]);
//! * synthetic embedding generators for desk-scale experiments ([`synth`]);
//! * a batch CLI emitting machine-readable JSON/CSV ([`cli`]).
//!
//! Numeric code is generic over the [`Scalar`] element type (`f32` or
//! `f64`); the aliases below fix the common double-precision case.

pub mod balancing;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod nc1;
pub mod retrain;
pub mod rng;
pub mod scalar;
pub mod svm;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;

/// Double-precision embedding dataset, the default for CLI work.
pub type DatasetF64 = dataset::EmbeddingDataset<f64>;
/// Single-precision embedding dataset.
pub type DatasetF32 = dataset::EmbeddingDataset<f32>;
/// Double-precision retrained linear layer.
pub type ClassifierF64 = retrain::LinearClassifier<f64>;
