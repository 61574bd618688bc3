use thiserror::Error;

/// Errors raised by the time-scale calculus, the stabilizer and the plant
/// simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("t = {t} is not a member of the time scale")]
    NotMember { t: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("non-regressive step at t = {t} (|det(I + mu A)| = {det:e})")]
    Singularity { t: f64, det: f64 },

    #[error("weighted Gramian not invertible at t = {t} (eps1 = {eps1:e}, eps2 = {eps2:e})")]
    Controllability { t: f64, eps1: f64, eps2: f64 },

    #[error("t = {t} is not covered by the gain schedule")]
    Coverage { t: f64 },

    #[error("trajectory diverged at t = {t} (|x| = {norm:e})")]
    Divergence { t: f64, norm: f64 },

    #[error(
        "rate alpha = {alpha} is not positively regressive at t = {t} (1 - mu alpha = {margin})"
    )]
    RateInadmissible { t: f64, alpha: f64, margin: f64 },

    #[error("gain schedule failed at {} node(s); first at t = {}: {}", .failures.len(), .failures[0].0, .failures[0].1)]
    Schedule { failures: Vec<(f64, String)> },

    #[error("I/O error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
