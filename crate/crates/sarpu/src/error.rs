//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("cannot initialize: {0}")]
    CannotInitialize(String),

    #[error("oracle propensity has no entry for assignment {0:?}")]
    MissingAssignment(Vec<u8>),

    #[error("label mechanism error: {0}")]
    Mechanism(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column {col}: {message}")]
    Parse {
        row: usize,
        col: String,
        message: String,
    },

    #[error("missing ground truth: {0}")]
    MissingTruth(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
