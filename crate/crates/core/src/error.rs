use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("load {rho} is not below 1: the stationary distribution does not exist")]
    Divergent { rho: f64 },

    #[error("load {rho} saturates the blocked channel (limit {limit})")]
    Saturated { rho: f64, limit: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("protocol invariant violated at t={at_ns}ns: {what}")]
    Invariant { at_ns: i64, what: String },

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
