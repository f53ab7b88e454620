use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value is out of its valid range.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// The input has zero norm, so its direction is undefined.
    #[error("zero-norm input to {0}")]
    ZeroNorm(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate null distribution: all {n} statistics equal {value}")]
    DegenerateNull { n: usize, value: f64 },

    #[error("latent is not registered in the generation ledger")]
    Unregistered,

    #[error("target attribute {0:?} is missing from the attribute table")]
    UnknownAttribute(String),

    #[error("provider error: {0}")]
    Provider(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by invalid user input rather than I/O or data corruption.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::UnknownAttribute(_)
                | Error::DimensionMismatch { .. }
                | Error::ShapeMismatch { .. }
        )
    }
}
