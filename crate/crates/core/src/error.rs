use std::io;

use thiserror::Error;

/// Errors produced by the fusion engine.
#[derive(Error, Debug)]
pub enum Error {
    /// An argument violated an operation's precondition (bad shape, range, or value).
    #[error("domain error: {0}")]
    Domain(String),

    /// A file or byte stream did not match its expected layout.
    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn format<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}
