use std::io;

use thiserror::Error;

/// Errors produced by the engine, the re-parametrization passes and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("missing weight tensor `{0}`")]
    MissingWeight(String),

    #[error("format error at byte {pos}: {msg}")]
    Format { pos: u64, msg: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn format_err(pos: u64, msg: impl Into<String>) -> Error {
    Error::Format { pos, msg: msg.into() }
}
