use erpcal_tensor::TensorError;

use crate::config::ConfigError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// Wrong magic, unsupported version or a malformed field.
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated payload: {0}")]
    Truncated(String),
    /// Trials whose extents disagree with the dataset header.
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("training diverged: {0}")]
    Diverged(String),
}

impl Error {
    /// Stable short code, one per variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Tensor(_) => "tensor",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Format(_) => "format",
            Error::Truncated(_) => "truncated",
            Error::Shape(_) => "shape",
            Error::Parse { .. } => "parse",
            Error::Invalid(_) => "invalid",
            Error::Diverged(_) => "diverged",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
