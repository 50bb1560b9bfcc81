use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] inneralign::Error),
    #[error("invalid config {path}: {reason}")]
    Config { path: PathBuf, reason: String },
    #[error("run directory {0} is locked by another process")]
    Locked(PathBuf),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// Stable short name for the error class.
    pub fn kind(&self) -> &'static str {
        use inneralign::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::DimensionMismatch(_) | E::Shape(_) => "shape",
                E::Empty(_) => "empty",
                E::NonFinite(_) => "non_finite",
                E::InvalidArgument(_) => "invalid_argument",
                E::TooLarge { .. } => "too_large",
                E::UnknownParameter(_) => "unknown_parameter",
                E::UnknownToken { .. } => "unknown_token",
                E::LayerOutOfRange { .. } => "layer_out_of_range",
                E::Format { .. } => "format",
                E::Diverged { .. } => "diverged",
                E::Io { .. } => "io",
            },
            CliError::Config { .. } => "config",
            CliError::Locked(_) => "locked",
            CliError::Usage(_) => "usage",
        }
    }

    /// One-line JSON rendering for stderr.
    pub fn to_line(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        serde_json::json!({ "error": self.kind(), "message": msg }).to_string()
    }
}
