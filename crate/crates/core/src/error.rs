use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} outside [0, 1]")]
    TimeOutOfRange { t: f64 },

    #[error("bridge requires s <= t, got s = {s}, t = {t}")]
    BridgeOrder { s: f64, t: f64 },

    #[error("negative bridge variance {radicand:e} at s = {s}, t = {t}")]
    NegativeVariance { s: f64, t: f64, radicand: f64 },

    #[error("{what} is singular at t = {t}")]
    Singular { what: &'static str, t: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("non-finite value in {context}: {detail}")]
    NonFinite { context: String, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("teacher gate failed: deviation {deviation:.3e} > {threshold:.3e}")]
    GateFailed { deviation: f64, threshold: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
