use thiserror::Error;

/// Errors raised by the simulation and verification pipelines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("control value {value:?} outside the control set")]
    Domain { value: Vec<f64> },

    #[error("simulation diverged on path {path} at step {step}")]
    SimulationDiverged { path: usize, step: usize },

    #[error("spike window [{start}, {end}) is not contained in a single coarse interval")]
    InvalidWindow { start: f64, end: f64 },

    #[error("stopping observable returned a non-finite value on path {path} at step {step}")]
    InvalidObservable { path: usize, step: usize },

    #[error("closed-form adjoint backend refused: {0}")]
    BackendRefused(String),

    #[error("regression design matrix is rank-deficient at step {step}")]
    DegenerateBasis { step: usize },

    #[error("penalized functional vanishes; no multiplier direction")]
    DegeneratePenalty,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
