use std::io;

use thiserror::Error;

/// Errors produced anywhere in the codec pipeline.
#[derive(Debug, Error)]
pub enum ClcError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("key-value cache is empty")]
    EmptyCache,

    #[error("malformed bitstream: {0}")]
    MalformedBitstream(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },

    #[error("content hash mismatch")]
    HashMismatch,

    #[error("dictionary mismatch: bitstream was coded against a different dictionary")]
    DictionaryMismatch,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("bound regime violated: {0}")]
    Regime(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, ClcError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(ClcError::InvalidArgument(msg.into()))
}
