//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad parameter values, impossible sizes).
    #[error("configuration error: {0}")]
    Config(String),

    /// Inputs whose shapes do not agree with each other or with the config.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A file could not be read or written.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A file was read but its contents are not a valid instance of the
    /// expected format. `field` names the offending header field or byte
    /// region.
    #[error("parse error in {path}: {field}: {message}")]
    Parse {
        path: String,
        field: String,
        message: String,
    },

    /// Non-finite intermediates or a violated numerical guarantee.
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: &std::path::Path, field: &str, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            field: field.to_string(),
            message: message.into(),
        }
    }
}
