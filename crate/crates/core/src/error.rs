//! Crate-wide error type.

use thiserror::Error;

/// Coarse classification used by the CLI to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad inputs: files, dimensions, labels, arguments.
    Validation,
    /// A numerical procedure failed: divergence, non-convergence, degenerate input.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },
    #[error("label out of range at row {row}: {kind} id {value} not in [0, {limit})")]
    LabelOutOfRange {
        row: usize,
        kind: &'static str,
        value: u32,
        limit: u32,
    },
    #[error("group/class inconsistency at row {row}: group {group} maps to class {mapped} but label is {label}")]
    GroupClassMismatch {
        row: usize,
        group: u32,
        mapped: u32,
        label: u32,
    },
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("class {0} has no examples")]
    EmptyClass(usize),
    #[error("empty partition along {0} axis")]
    EmptyPartition(&'static str),
    #[error("target ratio {target} below achievable minimum for class {class} (min count {min_count}, max count {max_count})")]
    RatioUnachievable {
        class: usize,
        target: f64,
        min_count: usize,
        max_count: usize,
    },
    #[error("feature dimension {n} exceeds dense limit {limit}")]
    DenseLimit { n: usize, limit: usize },
    #[error("probe count must be at least 1")]
    ZeroProbes,
    #[error("solver did not converge: residual {residual} after {iterations} iterations")]
    SolverDidNotConverge { residual: f64, iterations: usize },
    #[error("training diverged at step {step}: loss {loss}")]
    TrainDiverged { step: usize, loss: f64 },
    #[error("data is not linearly separable")]
    NonSeparable,
    #[error("constant input: correlation undefined")]
    ConstantInput,
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("plan length {plan} does not match dataset size {data}")]
    PlanMismatch { plan: usize, data: usize },
    #[error("probability out of range at index {index}: {value} not in (0, 1]")]
    BadProbability { index: usize, value: f64 },
    #[error("invalid argument: {0}")]
    InvalidArg(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::SolverDidNotConverge { .. }
            | Error::TrainDiverged { .. }
            | Error::NonSeparable
            | Error::ConstantInput => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
