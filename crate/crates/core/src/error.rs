use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("stale activation cache: network changed since the forward pass")]
    StaleCache,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("no candidates stored for sparsity {0}; run a longer search or raise lambda")]
    NoCandidates(f64),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
