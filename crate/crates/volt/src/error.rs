//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, VoltError>;

#[derive(Debug, Error)]
pub enum VoltError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(String),

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error("unparsable cell at row {row}, column '{column}': {value:?}")]
    UnparsableCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("duplicate timestamp at row {row}")]
    DuplicateTimestamp { row: usize },

    #[error("non-monotone timestamp at row {row}")]
    NonMonotoneTimestamp { row: usize },

    #[error("non-uniform sampling interval at row {row}: expected {expected}, got {got}")]
    NonUniformSpacing {
        row: usize,
        expected: f64,
        got: f64,
    },

    #[error("series too short: length {len}, need at least {min}")]
    SeriesTooShort { len: usize, min: usize },

    #[error("non-positive value in {context}: {value}")]
    NonPositive { context: &'static str, value: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("matrix not positive definite in {context} (Cholesky failed after jitter retries)")]
    NotPositiveDefinite { context: &'static str },

    #[error("volatility path is already annualized")]
    AlreadyAnnualized,

    #[error("{0}")]
    Invalid(String),
}

impl VoltError {
    pub fn invalid_param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        VoltError::InvalidParam {
            name: name.into(),
            reason: reason.into(),
        }
    }
}

impl From<csv::Error> for VoltError {
    fn from(e: csv::Error) -> Self {
        VoltError::Csv(e.to_string())
    }
}
