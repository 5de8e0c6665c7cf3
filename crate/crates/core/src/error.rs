use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("incompatible architecture: expected fingerprint {expected:016x}, found {found:016x}")]
    IncompatibleArchitecture { expected: u64, found: u64 },

    /// A help request arrived before any batch was stored for on-demand sensitivity.
    #[error("no data available to compute sensitivity")]
    NoData,

    #[error(transparent)]
    Decode(#[from] DecodeError),

    #[error("configuration error:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("workload error: {0}")]
    Workload(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Failure while decoding a binary structure, with the byte offset where it was detected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("decode error at byte {offset}: {kind}")]
pub struct DecodeError {
    pub offset: usize,
    pub kind: DecodeErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeErrorKind {
    Truncated { needed: usize, available: usize },
    BadMagic { found: u32 },
    UnsupportedVersion(u8),
    UnexpectedKind(u8),
    Invalid(&'static str),
    TrailingBytes(usize),
}

impl fmt::Display for DecodeErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeErrorKind::Truncated { needed, available } => {
                write!(f, "truncated input (needed {needed} bytes, {available} available)")
            }
            DecodeErrorKind::BadMagic { found } => write!(f, "bad magic 0x{found:08x}"),
            DecodeErrorKind::UnsupportedVersion(v) => write!(f, "unsupported version {v}"),
            DecodeErrorKind::UnexpectedKind(k) => write!(f, "unexpected message kind {k}"),
            DecodeErrorKind::Invalid(what) => write!(f, "{what}"),
            DecodeErrorKind::TrailingBytes(n) => write!(f, "{n} trailing bytes"),
        }
    }
}

impl DecodeError {
    pub fn new(offset: usize, kind: DecodeErrorKind) -> Self {
        DecodeError { offset, kind }
    }
}
