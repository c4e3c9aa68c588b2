use thiserror::Error;

use crate::mmspace::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inputs whose shapes do not fit together.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Data that is well-shaped but violates a space or coupling invariant.
    #[error("validation failed: {0}")]
    Validation(ValidationReport),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The robust bisection could not find any `t` at which the PGW
    /// condition holds.
    #[error("no crossing: {0}")]
    NoCrossing(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        match e.classify() {
            serde_json::error::Category::Io => Error::Io(e.into()),
            _ => Error::Format(e.to_string()),
        }
    }
}
