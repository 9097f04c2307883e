use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("adapter `{adapter}` failed: {message}")]
    Adapter { adapter: String, message: String },

    #[error("swap failed on pair {pair} ({source_index} -> {target_index}): {message}")]
    Swap {
        pair: usize,
        source_index: usize,
        target_index: usize,
        message: String,
    },

    #[error("training aborted at step {step}: {message}")]
    Training { step: usize, message: String },

    #[error("capability error: {0}")]
    Capability(String),

    #[error("run directory {0} is locked by another command")]
    Locked(PathBuf),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Short machine-readable kind, used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::Adapter { .. } => "adapter",
            Error::Swap { .. } => "swap",
            Error::Training { .. } => "training",
            Error::Capability(_) => "capability",
            Error::Locked(_) => "locked",
            Error::Io(_) | Error::Image(_) | Error::Json(_) | Error::Csv(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
