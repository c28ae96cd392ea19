use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Binary file did not match its declared layout.
    #[error("{file}: {message}")]
    Format { file: String, message: String },

    /// A metadata line failed to parse or validate. Lines are 1-based.
    #[error("metadata line {line}: {message}")]
    Metadata { line: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("zero-norm vector at row {row}")]
    ZeroNorm { row: usize },

    #[error("non-finite value in {what} at row {row}")]
    NonFinite { what: String, row: usize },

    #[error("split error: {0}")]
    Split(String),

    #[error("empty retrieval pool")]
    EmptyPool,

    #[error("training diverged at epoch {epoch}, step {step}: loss is not finite")]
    Diverged { epoch: usize, step: usize },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(file: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad inputs (files, configs, shapes) rather
    /// than failures during a computation.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Diverged { .. })
    }
}
