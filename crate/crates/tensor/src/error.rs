use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid argument to {op}: {detail}")]
    Invalid { op: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Dimension {
        op,
        detail: detail.into(),
    }
}
