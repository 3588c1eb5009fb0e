use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("PLY parse error at line {line}: {message}")]
    Ply { line: usize, message: String },

    #[error("unsupported PLY format `{0}` (only ascii and binary_little_endian are supported)")]
    UnsupportedFormat(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Core(#[from] stmmreg_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn ply(line: usize, message: impl Into<String>) -> Self {
        Error::Ply {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
