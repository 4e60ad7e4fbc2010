use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures decoding a DSQF feature container.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes {found:?}, expected \"DSQF\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("dimensions {rows}x{cols} overflow the addressable payload size")]
    DimensionOverflow { rows: u32, cols: u32 },
    #[error("zero dimension in header ({rows}x{cols})")]
    EmptyDimension { rows: u32, cols: u32 },
    #[error("non-finite payload value at flat index {index}")]
    NonFinitePayload { index: usize },
    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: u64 },
}

/// Coarse failure class, used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Config => "config",
            Self::Data => "data",
            Self::Numeric => "numeric",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("json error in {path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("invalid config at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("numerical check failed: {0}")]
    Numeric(String),
    #[error("class {class} has no examples in the {split} split")]
    ClassAbsent { class: usize, split: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Self::Config { .. } => ErrorCategory::Config,
            Self::NonFinite(_) | Self::Numeric(_) => ErrorCategory::Numeric,
            Self::Io { .. }
            | Self::Format { .. }
            | Self::Json { .. }
            | Self::Data(_)
            | Self::Shape(_)
            | Self::ClassAbsent { .. } => ErrorCategory::Data,
        }
    }
}
