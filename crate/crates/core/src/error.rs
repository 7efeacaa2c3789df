use std::fmt;

/// Which coordinate of a dataset a diagnostic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    /// Zero-based input column.
    Input(usize),
    Output,
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coordinate::Input(j) => write!(f, "input dimension {} (x{})", j + 1, j + 1),
            Coordinate::Output => write!(f, "output"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CcrError {
    #[error("parse error on line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("{0} has zero spread (constant coordinate)")]
    ZeroSpread(Coordinate),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class {0} is absent from the training labels")]
    MissingClass(usize),

    #[error("class count < 2")]
    TooFewClasses,

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CcrError>;

pub(crate) fn invalid(msg: impl Into<String>) -> CcrError {
    CcrError::InvalidArgument(msg.into())
}
