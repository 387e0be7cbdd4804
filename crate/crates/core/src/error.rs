use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
    #[error("{what} = {value} is outside the admissible range {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: String,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("regime mismatch: {0}")]
    Regime(String),
    #[error("removable singularity at alpha = {alpha}; use the quadrature path instead")]
    RemovableSingularity { alpha: f64 },
    #[error("grid too coarse: {points} points, need at least {required}")]
    Resolution { points: usize, required: usize },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("io error at {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
