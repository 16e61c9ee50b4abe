use thiserror::Error;

/// Failures shared across the fitting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate frame: {0}")]
    DegenerateFrame(&'static str),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid pixel at ({x}, {y}) channel {channel}: {value}")]
    InvalidPixel {
        x: usize,
        y: usize,
        channel: usize,
        value: f64,
    },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }

    pub fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
