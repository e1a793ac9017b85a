//! Error taxonomy shared by every module in this crate.
//!
//! Variants are grouped by what the caller can do about them: bad
//! configuration and bad input data are user-fixable, `Numeric` and
//! `ContractViolation` indicate a bug or a poisoned run, and
//! `DegenerateSplit` / `TrainingInfeasible` are legitimate outcomes of
//! adversarial split search that callers are expected to handle.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is outside its documented range
    /// (e.g. a zero layer width, delta not in (0,1), a negative rate).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Tensor/vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An index (class label, layer id, ...) is out of its valid range.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// An API precondition was violated (stale forward cache, misaligned
    /// inputs, ids that don't match between files, ...).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// A non-finite value surfaced where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A function argument is outside the mathematical domain of the
    /// operation (e.g. a KL endpoint on the boundary of (0,1)).
    #[error("domain error: {0}")]
    Domain(String),

    /// Split sampling kept producing an empty train or test side.
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    /// The train split cannot support fitting a classifier
    /// (too few examples, or a single class).
    #[error("training infeasible: {0}")]
    TrainingInfeasible(String),

    /// A data file failed to parse; `line` is 1-based and counts the
    /// header line.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    /// The dataset holds no examples.
    #[error("empty dataset")]
    EmptyDataset,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable category name, used by the CLI to map
    /// errors onto exit codes and by tests to assert on error kinds.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid-config",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::IndexOutOfRange(_) => "index-out-of-range",
            Error::ContractViolation(_) => "contract-violation",
            Error::Numeric(_) => "numeric",
            Error::Domain(_) => "domain",
            Error::DegenerateSplit(_) => "degenerate-split",
            Error::TrainingInfeasible(_) => "training-infeasible",
            Error::Parse { .. } => "parse",
            Error::EmptyDataset => "empty-dataset",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
