use std::io;

use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate channel: spreading vector is all zero")]
    DegenerateChannel,

    #[error("matrix is numerically rank deficient (pivot {pivot} at row {row})")]
    NumericalRank { row: usize, pivot: f64 },

    #[error("dense oracle refused: {size}x{size} exceeds cap {cap}")]
    OracleTooLarge { size: usize, cap: usize },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
