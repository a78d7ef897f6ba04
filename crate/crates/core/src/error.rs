use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input too short: {len} samples for a window of {window}")]
    InputTooShort { len: usize, window: usize },
    #[error("magnitude must be nonnegative")]
    NegativeMagnitude,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("{what}: expected shape {expected:?}, got {actual:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] avsep_autograd::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Self::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
