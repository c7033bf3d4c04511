use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("empty input")]
    Empty,

    #[error("invalid quantization config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("block mismatch: {0}")]
    BlockMismatch(String),

    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
