use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// Misuse of the gradient tape or optimizer (non-scalar root, second
    /// backward pass, missing gradients).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("{source_name}: format error at byte offset {offset}: {reason}")]
    Format {
        source_name: String,
        offset: u64,
        reason: String,
    },

    #[error("weights file line {line}: {reason}")]
    Weights { line: usize, reason: String },

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
