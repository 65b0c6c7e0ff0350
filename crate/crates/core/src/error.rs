use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, mismatched shapes or bad user input.
    #[error("configuration error: {0}")]
    Config(String),

    /// A value left the finite range, or an operation was asked to leave its domain.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed files, bitstreams or checkpoints.
    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch: expected {expected:016x}, found {found:016x}")]
    Checksum { expected: u64, found: u64 },

    /// Metric preconditions that cannot be met by the supplied data.
    #[error("domain error: {0}")]
    Domain(String),

    /// The graph has already been differentiated.
    #[error("stale graph: backward already ran on this graph; call reset first")]
    StaleGraph,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Format(_) | Error::Checksum { .. } | Error::Io { .. } => 3,
            Error::Numeric(_) | Error::Domain(_) | Error::StaleGraph => 4,
        }
    }
}
