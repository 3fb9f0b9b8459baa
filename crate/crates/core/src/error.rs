use thiserror::Error;

/// Errors raised by the operators, generators and verifiers of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("empty measure: {0}")]
    MeasureZero(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("ellipticity violated: {0}")]
    Ellipticity(String),
    #[error("linear solve diverged at step {step}: {message} (residual trace {trace:?})")]
    Solver {
        step: usize,
        message: String,
        trace: Vec<f64>,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
