use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The spec makes sigma vanish after a finite time, so the kernel would hit zero.
    #[error("degenerate spec: {0}")]
    DegenerateSpec(String),

    /// E[int_0^inf sigma^2 ds] is not finite.
    #[error("divergent mass: {0}")]
    DivergentMass(String),

    #[error("non-positive pricing kernel {value:e} at t = {time}")]
    NonPositiveKernel { time: f64, value: f64 },

    #[error("money-market account overflowed at t = {time}")]
    BankOverflow { time: f64 },

    #[error("unsupported family: {0}")]
    UnsupportedFamily(String),

    #[error("invalid curve: {0}")]
    InvalidCurve(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
