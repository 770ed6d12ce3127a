use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = OtomError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum OtomError {
    /// An argument fell outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl OtomError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        OtomError::Domain(msg.into())
    }
}
