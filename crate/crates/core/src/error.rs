use thiserror::Error;

/// Errors produced by model construction, synthesis and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("index out of range: {0}")]
    Index(String),

    /// An enumeration or dense solve would exceed its size guard.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("solver error: {0}")]
    Solver(String),

    /// An internal invariant did not hold.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
