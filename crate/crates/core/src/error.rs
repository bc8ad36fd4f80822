use std::io;

use thiserror::Error;

/// Protocol error codes carried by `Message::Error`.
pub mod codes {
    pub const UNKNOWN_WORKER: u16 = 1;
    pub const SAMPLE_OUT_OF_RANGE: u16 = 2;
    pub const OUT_OF_ORDER: u16 = 3;
    pub const UNEXPECTED_MESSAGE: u16 = 4;
    pub const NON_FINITE_VALUE: u16 = 5;
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("protocol error {code}: {detail}")]
    Protocol { code: u16, detail: String },

    #[error("decode error: {0}")]
    Decode(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("query error: {0}")]
    Query(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn protocol(code: u16, detail: impl Into<String>) -> Self {
        Error::Protocol {
            code,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
