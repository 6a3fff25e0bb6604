use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("maximum drift is unbounded for zero dead time")]
    Unbounded,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("fold range too narrow: {deficit:.3e} of the mass lies outside m = {m_min}..={m_max}")]
    InsufficientFoldSpan { m_min: i64, m_max: i64, deficit: f64 },

    #[error("threshold {threshold} is unreachable: {reason}")]
    Unreachable { threshold: f64, reason: String },

    #[error("no counts in histogram")]
    NoCounts,

    #[error("flat histogram: |m| = {modulus:.4} below floor {floor} (drift too large or too few counts)")]
    FlatHistogram { modulus: f64, floor: f64 },

    #[error("no lock: peak Pearson correlation {peak:.3} below {threshold}")]
    NoLock { peak: f64, threshold: f64 },

    #[error("insufficient samples for tau = {tau}: need {needed}, have {have}")]
    InsufficientSamples { tau: f64, needed: usize, have: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("convergence failure: {0}")]
    Convergence(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
