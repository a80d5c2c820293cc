use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Bad magic, bad version, truncated record, or an otherwise unparsable file.
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),

    #[error("token id {id} out of range for vocabulary of size {d_vocab}")]
    TokenOutOfRange { id: u32, d_vocab: usize },

    #[error("index out of bounds: {0}")]
    OutOfBounds(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    /// A computation produced no usable value (zero variance, too few samples, ...).
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            Error::Invalid(_) => 1,
            _ => 2,
        }
    }
}
