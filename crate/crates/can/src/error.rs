use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
///
/// The variants map onto the CLI exit-code classes: `Usage` (2), `Data` (3),
/// `Numeric` (4) and `Io`/`Corrupt` (5). Everything else in the library
/// reports through these so a failure anywhere surfaces with a single
/// machine-parsable class.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt or incompatible file {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code class for the CLI: usage 2, data 3, numeric 4, i/o 5.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ShapeMismatch { .. } | Error::InvalidArgument(_) => 2,
            Error::Data(_) => 3,
            Error::Numeric(_) => 4,
            Error::Io { .. } | Error::Corrupt { .. } => 5,
        }
    }

    /// Single-word class tag used in the CLI's one-line error output.
    pub fn class(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } | Error::InvalidArgument(_) => "usage",
            Error::Data(_) => "data",
            Error::Numeric(_) => "numeric",
            Error::Io { .. } | Error::Corrupt { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
