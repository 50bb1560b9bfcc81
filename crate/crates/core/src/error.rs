use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("instance too large for the exact solver ({n}x{m} > {limit} cells); use sinkhorn")]
    TooLarge { n: usize, m: usize, limit: usize },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("token id {id} outside vocabulary of size {vocab}")]
    UnknownToken { id: usize, vocab: usize },

    #[error("layer {layer} outside [0, {num_layers}]")]
    LayerOutOfRange { layer: usize, num_layers: usize },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("training diverged at step {step}: {what} is non-finite")]
    Diverged { step: usize, what: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
