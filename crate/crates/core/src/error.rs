use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or raster extents are incompatible with the operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// The caller violated an API precondition (empty split, non-scalar loss, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A binary file does not follow its layout.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// Inputs parsed but failed a semantic check.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("label value {value} at index {index} is not one of 0, 1, -1")]
    LabelDomain { index: usize, value: f32 },

    /// NaN or infinity where finite values are required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 2,
            _ => 1,
        }
    }
}
