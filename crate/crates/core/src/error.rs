//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor operands have incompatible shapes.
    #[error("shape mismatch in {context}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        context: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An input value is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value is invalid or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// An API contract was violated (caller bug rather than bad data).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Statistics cannot be computed on this input (e.g. constant lists).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Corpus or pair-file ingestion failed.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    /// Checkpoint bytes do not follow the expected layout.
    #[error("checkpoint format error at byte {offset}: {what}")]
    Format { offset: u64, what: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
