use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("{op} domain error: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error("interaction order {order} overflows (log-modulus {log_modulus:.3})")]
    OrderOverflow { order: usize, log_modulus: f64 },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("missing column `{0}` in header")]
    MissingColumn(String),

    #[error("embedding cache has no entry for row {0}")]
    CacheMiss(u64),

    #[error("bad file format in {path}: {message}")]
    Format { path: String, message: String },

    #[error("unknown domain {0}")]
    UnknownDomain(usize),

    #[error("missing teacher for domain {0}")]
    MissingTeacher(usize),

    #[error("missing file or directory: {}", .0.display())]
    MissingPath(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by malformed or missing input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::Parse { .. }
                | Error::MissingColumn(_)
                | Error::CacheMiss(_)
                | Error::Format { .. }
                | Error::UnknownDomain(_)
                | Error::MissingTeacher(_)
                | Error::MissingPath(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }

    /// True for numeric failures (overflow, non-finite losses).
    pub fn is_numeric_failure(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. } | Error::OrderOverflow { .. }
        )
    }
}
