use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown shape id {0}")]
    UnknownShape(u64),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed file: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: malformed config: {source}")]
    Config {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("checkpoint does not match model: {0}")]
    CheckpointMismatch(String),

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFinite { iteration: u64, detail: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable `(code, name)` classification shared by the command line
    /// (as exit status) and the C interface (as return status).
    pub fn class(&self) -> (u8, &'static str) {
        match self {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                (3, "missing_file")
            }
            Error::Io { .. } => (4, "io"),
            Error::Format { .. } | Error::Config { .. } | Error::InvalidSpec(_) => (5, "malformed"),
            Error::CheckpointMismatch(_) => (6, "checkpoint_mismatch"),
            Error::InvalidArgument(_)
            | Error::ShapeMismatch { .. }
            | Error::Empty(_)
            | Error::UnknownShape(_) => (7, "invalid_input"),
            Error::NonFinite { .. } => (8, "non_finite"),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn mismatch(
        context: &'static str,
        expected: impl std::fmt::Display,
        got: impl std::fmt::Display,
    ) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
