use thiserror::Error;

/// Errors raised by the partitioning engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("pair `{id}`: {reason}")]
    Contract { id: String, reason: String },

    #[error("invalid input at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("labeling aborted: {0}")]
    Aborted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(id: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Contract {
            id: id.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
