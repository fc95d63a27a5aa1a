use thiserror::Error;

/// Errors produced by the synthesis, simulation and analysis layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("synthesis failed for {matrix}: {reason}")]
    Synthesis { matrix: String, reason: String },

    #[error(
        "parameterization basis inadequate: max validation error {residual:.3e} at sigma = {worst_sigma:?}"
    )]
    BasisInadequate {
        residual: f64,
        worst_sigma: Vec<f64>,
    },

    #[error("certificate error: {0}")]
    Certificate(String),

    #[error("integration diverged at t = {t}")]
    Diverged { t: f64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn dim(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
