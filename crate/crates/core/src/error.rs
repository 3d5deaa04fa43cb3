use thiserror::Error;

pub type Result<T, E = ClbfError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ClbfError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no forward pass recorded on this tape")]
    NoForwardPass,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ClbfError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        ClbfError::InvalidArgument(msg.into())
    }

    pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(ClbfError::DimensionMismatch { expected, actual })
        }
    }
}
