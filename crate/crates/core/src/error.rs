use std::io;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid lattice key: {0}")]
    InvalidKey(String),
    #[error("point lies within {margin:e} of a simplex face (min barycentric weight {min_bary:e})")]
    BoundaryProximity { min_bary: f64, margin: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("size guard exceeded: {0}")]
    SizeGuard(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("incompatible checkpoint: {0}")]
    Version(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::InvalidDimension(_) | Error::Version(_) => 2,
            Error::NonFiniteGradient(_) | Error::NonFiniteLoss(_) => 4,
            _ => 3,
        }
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
