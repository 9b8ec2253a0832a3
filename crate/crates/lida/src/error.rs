//! Error types shared across the crate.

use thiserror::Error;

/// Why a persisted file was rejected.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorruptKind {
    #[error("bad magic (not a {expected} file)")]
    BadMagic { expected: &'static str },
    #[error("unsupported version {found}")]
    BadVersion { found: u8 },
    #[error("file truncated while reading {context}")]
    Truncated { context: &'static str },
    #[error("trailing bytes after final section")]
    TrailingData,
    #[error("invalid field: {0}")]
    InvalidField(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown label: {0}")]
    UnknownLabel(String),
    #[error("cannot normalize a zero-norm feature")]
    DegenerateFeature,
    #[error("encoder incompatible with registry: {0}")]
    IncompatibleEncoder(String),
    #[error("no real prototype available (encoder not pretrained)")]
    NotPretrained,
    #[error("corrupt file: {0}")]
    Corrupt(#[from] CorruptKind),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Process exit code for the CLI. Usage errors (code 2) are handled by
    /// the argument parser before any `Error` exists.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Image(_) => 3,
            Error::Corrupt(_) => 4,
            Error::Numerical(_) => 5,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
