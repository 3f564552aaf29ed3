use std::io;

use thiserror::Error;

/// Errors produced by the watermarking pipelines and their tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The de-neighborhood repair loop gave up with constraint violations left.
    #[error("mapping construction failed: {residual} violations remain after {passes} repair passes")]
    Construction { residual: usize, passes: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("recovery rate is undefined for an empty ground-truth set")]
    UndefinedRate,

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("malformed image: {0}")]
    Format(String),

    #[error("key fingerprint mismatch: image was embedded with {expected}, got {actual}")]
    KeyMismatch { expected: String, actual: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
