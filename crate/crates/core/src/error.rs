use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("bounded sampling failed: no sample with norm <= {bound} after {attempts} draws")]
    Sampling { bound: f64, attempts: u64 },

    #[error("gain synthesis diverged for sensor {sensor}: {reason}")]
    Synthesis { sensor: usize, reason: String },

    #[error("protocol error at sensor {sensor}: {reason}")]
    Protocol { sensor: usize, reason: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// Every semantic violation found while validating a scenario.
    #[error("scenario is invalid:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
