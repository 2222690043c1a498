use crate::backend::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input line. `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Well-formed input that violates a data invariant (duplicates, conflicts).
    #[error("data error at line {line}: {message}")]
    Data { line: usize, message: String },

    #[error("invalid identifier {0:?}: must be non-empty and contain no whitespace")]
    InvalidId(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("prompt budget exceeded: {0}")]
    Budget(String),

    #[error("missing passage text for {0}")]
    MissingPassage(String),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
