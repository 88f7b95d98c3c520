use nalgebra::DVector;
use thiserror::Error;

/// Errors produced across the learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("ill-conditioned system: {0}")]
    Conditioning(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("integration failed at t = {t}: {message}")]
    Integration {
        t: f64,
        last_state: DVector<f64>,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}
