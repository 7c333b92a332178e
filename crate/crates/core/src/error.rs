use thiserror::Error;

pub type Result<T> = std::result::Result<T, CtmError>;

#[derive(Debug, Error)]
pub enum CtmError {
    #[error("invalid chain: {0}")]
    InvalidChain(String),

    #[error("chain is not absorbing: (I - Q) is singular")]
    NonAbsorbing,

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("{what} {value} out of range [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: usize,
        min: usize,
        max: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("inconsistent reconstruction: {0}")]
    Inconsistent(String),

    #[error("configuration error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CtmError {
    pub(crate) fn config(line: usize, message: impl Into<String>) -> Self {
        CtmError::Config {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn parse(row: usize, column: usize, message: impl Into<String>) -> Self {
        CtmError::Parse {
            row,
            column,
            message: message.into(),
        }
    }
}
