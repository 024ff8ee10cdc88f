use thiserror::Error;

/// Errors raised by the simulation and verification routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {left} cells vs {right} cells")]
    GridMismatch { left: usize, right: usize },

    #[error("invalid mode: {0}")]
    InvalidMode(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("step size {h} exceeds stability bound {bound} (h <= 0.1 eps^2 / max mu)")]
    Unstable { h: f64, bound: f64 },

    #[error("degenerate state: {0}")]
    Degenerate(String),

    #[error("infeasible event: {0}")]
    InfeasibleEvent(String),

    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
