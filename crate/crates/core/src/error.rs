use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    /// A selection policy was asked to run on a view that lacks the
    /// information it needs (e.g. popularity-based policies on a hidden view).
    #[error("policy unavailable: {0}")]
    PolicyUnavailable(String),

    #[error("diversity undefined: a market needs at least two entries")]
    UndefinedDiversity,

    #[error("degenerate vector: zero norm in cosine distance")]
    DegenerateVector,

    #[error("degenerate variance: all centered embeddings are zero")]
    DegenerateVariance,

    #[error("gini undefined: all counts are zero")]
    UndefinedGini,

    #[error("config error: key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("data format error at line {line}: {message}")]
    DataFormat { line: usize, message: String },

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn data_format(line: usize, message: impl Into<String>) -> Self {
        Error::DataFormat {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
