use std::path::PathBuf;

/// Errors raised by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),

    #[error("optimizer step rejected: non-finite gradient in parameter `{param}`")]
    OptimizerStepRejected { param: String },

    #[error("training diverged at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("manifest {path}:{line}: {detail}")]
    Manifest {
        path: PathBuf,
        line: u64,
        detail: String,
    },

    #[error("insufficient population for class {class}: need {needed}, have {available} (short by {})", needed - available)]
    InsufficientClass {
        class: u8,
        needed: usize,
        available: usize,
    },

    #[error("container format: {0}")]
    Format(String),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
