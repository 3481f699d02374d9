use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed file: {msg}")]
    Malformed { path: PathBuf, msg: String },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint incompatible with requested config: field `{field}` is {found} in file, {expected} requested")]
    Compat {
        field: &'static str,
        found: String,
        expected: String,
    },

    #[error("dataset manifest mismatch: {}", .0.join(", "))]
    Manifest(Vec<String>),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for the CLI: 2 for file-system and decoding failures,
    /// 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Malformed { .. } | Error::Format(_) => 2,
            _ => 1,
        }
    }
}
