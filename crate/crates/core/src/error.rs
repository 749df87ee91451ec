use thiserror::Error;

#[derive(Debug, Error)]
pub enum QmriError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate trajectory: |omega_tau[{component}]| = {value:e} is below tolerance")]
    DegenerateTrajectory { component: usize, value: f64 },
    #[error("jacobian cache was built for a different parameter map")]
    CacheMismatch,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, QmriError>;
