use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The file does not start with the expected magic bytes.
    #[error("format error: {0}")]
    Format(String),

    /// Truncated payload, inconsistent dimensions, unparsable metadata.
    #[error("corrupt file: {0}")]
    Corrupt(String),

    /// A data-model invariant does not hold.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("no candidate: {0}")]
    NoCandidate(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("failed to write report: {0}")]
    Write(String),

    #[error("input too large for oracle: {0}")]
    OracleTooLarge(String),
}

impl Error {
    /// Stable machine-readable code, used in CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Corrupt(_) => "corrupt-file",
            Error::Validation(_) => "validation",
            Error::Parse { .. } => "parse",
            Error::Alignment(_) => "alignment",
            Error::Index(_) => "index",
            Error::NoCandidate(_) => "no-candidate",
            Error::Empty(_) => "empty",
            Error::Dimension(_) => "dimension",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::NonFinite(_) => "non-finite",
            Error::Write(_) => "io",
            Error::OracleTooLarge(_) => "oracle-too-large",
        }
    }

    pub(crate) fn csv(e: impl std::fmt::Display) -> Self {
        Error::Write(e.to_string())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
