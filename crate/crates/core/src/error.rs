use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input rejected by a domain invariant (empty phrase, self-loop, low similarity, ...).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("not found: {0}")]
    NotFound(String),

    /// Operation called outside its precondition.
    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    /// Index directory is missing, corrupt, or written by another format version.
    #[error("index format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// A remote provider call failed. `batch` is the index of the failing batch, when batched.
    #[error("{provider} provider error (batch {batch:?}, retryable: {retryable}): {message}")]
    Provider {
        provider: &'static str,
        batch: Option<usize>,
        retryable: bool,
        message: String,
    },

    /// The reset vector has no positive mass; callers fall back to dense retrieval.
    #[error("degenerate reset vector: all seed scores are zero")]
    DegenerateReset,

    #[error("graph too large for the dense oracle: {nodes} nodes (limit {limit})")]
    OracleTooLarge { nodes: usize, limit: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
