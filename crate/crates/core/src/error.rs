use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the enhancement engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("cannot encode {path}: {reason}")]
    Encode { path: PathBuf, reason: String },

    #[error("singularity: {0}")]
    Singularity(String),

    #[error("parameter budget exceeded: {count} > {limit}")]
    ParamBudget { count: usize, limit: usize },

    #[error("backward called without a recorded forward pass")]
    BackwardWithoutForward,

    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),

    #[error("image too small: {0}")]
    ImageTooSmall(String),

    #[error("no patch passed selection")]
    NoPatches,

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
