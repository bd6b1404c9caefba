use thiserror::Error;

/// Errors raised by the subsampling library.
#[derive(Debug, Error)]
pub enum AdsError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("step index {index} out of range [{min}, {max}]")]
    Index { index: usize, min: usize, max: usize },

    #[error("numerical domain error: {0}")]
    Numerical(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("non-finite particle {particle} at diffusion step {step}")]
    NonFinite { step: usize, particle: usize },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AdsError>;

pub(crate) fn param<S: Into<String>>(msg: S) -> AdsError {
    AdsError::Parameter(msg.into())
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(AdsError::Shape { expected, got });
    }
    Ok(())
}
