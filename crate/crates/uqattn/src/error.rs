//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by the numerical kernel, the encoder, and the
/// measurement modules.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of two operands are incompatible for the named operation.
    #[error("{op}: dimension mismatch, {left} vs {right}")]
    DimMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    /// Dropout rate outside [0, 1).
    #[error("invalid dropout rate {rate}: must lie in [0, 1)")]
    InvalidRate { rate: f64 },

    /// A configuration value violates its stated invariant.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Token id not covered by the embedding table.
    #[error("token id {id} out of vocabulary (vocab size {vocab})")]
    OutOfVocab { id: usize, vocab: usize },

    /// Token-level uncertainty must be nonnegative.
    #[error("negative token uncertainty {value} at index {index}")]
    NegativeUncertainty { index: usize, value: f64 },

    /// Temperature must be strictly positive.
    #[error("invalid temperature {0}: must be > 0")]
    InvalidTemperature(f64),

    /// Confidence threshold outside (0, 1].
    #[error("invalid threshold {0}: must lie in (0, 1]")]
    InvalidThreshold(f64),

    /// An operation received an empty input it cannot define a result for.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// Normalizing variance contributions requires a positive total.
    #[error("zero total variance: normalized contributions are undefined")]
    ZeroTotalVariance,

    /// Temperature fitting needs at least two distinct labels.
    #[error("degenerate label set: {0}")]
    DegenerateLabels(String),

    /// The synthetic task parameters cannot produce valid examples.
    #[error("infeasible task spec: {0}")]
    InfeasibleSpec(String),

    /// A threshold-selection policy cannot be satisfied on the given data.
    #[error("infeasible policy: {0}")]
    InfeasiblePolicy(String),

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Diverged(String),

    /// An ensemble run was asked for more members than were supplied.
    #[error("missing ensemble members: need {needed}, have {have}")]
    MissingEnsembleMembers { needed: usize, have: usize },

    /// Filesystem failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A record stream or report file failed to parse; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A serialized artifact (checkpoint, report) is malformed.
    #[error("format error: {0}")]
    Format(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
