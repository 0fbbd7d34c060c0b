//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Variants map onto the
//! failure classes surfaced by the CLI as distinct exit codes.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Static configuration is inconsistent (layer dims, resolutions, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller passed an argument violating an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A numeric quantity became non-finite or otherwise unusable.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An internal invariant was broken; indicates a bug, not misuse.
    #[error("internal error: {0}")]
    Internal(String),

    /// A persisted file failed to parse; names the offending field.
    #[error("format error in field `{field}`: {detail}")]
    Format { field: String, detail: String },

    /// A metric is undefined for the given inputs (e.g. empty confusion matrix).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            detail: detail.into(),
        }
    }
}
