use thiserror::Error;

/// Errors raised by the oracles, samplers and experiment drivers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("vocabulary size must be at least 2, got {0}")]
    VocabTooSmall(usize),
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("state space {vocab}^{dims} exceeds the enumeration cap of {cap} states")]
    CapExceeded { vocab: usize, dims: usize, cap: usize },
    #[error("token {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("state has {got} tokens, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index {index} out of range for {len} states")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("distributions have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("time must be finite and nonnegative, got {0}")]
    NegativeTime(f64),
    #[error("not an unmasking transition: {0}")]
    InvalidPair(String),
    #[error("state {state} has zero mass at t = {t}; score is undefined there")]
    ZeroMass { state: usize, t: f64 },
    #[error("support violation: p({state}) > 0 but q({state}) = 0")]
    SupportViolation { state: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("uniformization intensity {lambda} too small: transition mass {total} > 1 at t = {t}")]
    IntensityTooSmall { lambda: f64, total: f64, t: f64 },
    #[error("integrator unstable: {0}")]
    IntegratorUnstable(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
