//! Crate-wide error type.

/// Errors raised by tensor ops, model forward passes, and the training harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("{op}: mask entries must be exactly 0 or 1")]
    NonBinaryMask { op: &'static str },

    #[error("{0}")]
    InvalidInput(String),

    #[error("loss term {term}: {source}")]
    NonFiniteTerm {
        term: &'static str,
        source: Box<Error>,
    },

    #[error("{path}: {detail}")]
    FileFormat { path: String, detail: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Wraps an error from building one loss term so the failing term is named.
    pub fn in_term(self, term: &'static str) -> Self {
        Error::NonFiniteTerm {
            term,
            source: Box::new(self),
        }
    }

    /// Tags an io error with the file it concerns.
    pub fn io_at(path: impl Into<std::path::PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
