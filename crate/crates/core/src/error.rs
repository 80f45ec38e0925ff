use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("projection matrix is rank deficient (rank < 3)")]
    RankDeficient,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("images are identical; PSNR is infinite")]
    IdenticalImages,

    #[error("degenerate residual: {0}")]
    DegenerateResidual(String),

    #[error("degenerate heatmap: all values are equal")]
    DegenerateHeatmap,

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("landmark names differ: {0}")]
    NameMismatch(String),

    #[error("missing landmark `{0}`")]
    MissingLandmark(String),

    #[error("{path}: data size mismatch (expected {expected} bytes, found {found})")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used by front-ends to map failures onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Schema,
    Numerical,
    Input,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::SizeMismatch { .. } | Error::Format { .. } => ErrorKind::Schema,
            Error::RankDeficient
            | Error::NonFinite { .. }
            | Error::IdenticalImages
            | Error::DegenerateResidual(_)
            | Error::DegenerateHeatmap => ErrorKind::Numerical,
            _ => ErrorKind::Input,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
