use std::path::PathBuf;

use nbtf_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed container; `offset` is the byte position where parsing failed.
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: usize, detail: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Non-finite values during training or evaluation.
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: usize, detail: impl Into<String>) -> Self {
        Error::Format {
            offset,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
