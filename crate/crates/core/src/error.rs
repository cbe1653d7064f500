use std::io;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("bandlimit mismatch: expected {expected}, got {got}")]
    BandlimitMismatch { expected: usize, got: usize },
    #[error("model chain error: {0}")]
    Chain(String),
    #[error("tape does not belong to these parameters")]
    StaleTape,
    #[error("sampling budget of {0} attempts exhausted")]
    SamplingExhausted(usize),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
