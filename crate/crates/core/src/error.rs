use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("backward requires a scalar loss, got shape {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("scale must be strictly positive, got {0}")]
    NonPositiveScale(f64),

    #[error("distribution family mismatch ({0} vs {1}) without a Monte-Carlo budget")]
    FamilyMismatch(&'static str, &'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("episode already finished; call reset first")]
    EpisodeFinished,

    #[error("unknown environment id `{0}`")]
    UnknownEnv(String),

    #[error("unsupported environment for {0}")]
    Unsupported(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(
    context: &'static str,
    expected: impl ToString,
    actual: impl ToString,
) -> Error {
    Error::Shape {
        context,
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
