use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry: {0}")]
    Geometry(String),

    #[error("weight class: {0}")]
    WeightClass(String),

    #[error("grid: {0}")]
    Grid(String),

    #[error("CFL violation: dt = {dt:.3e} exceeds limit {limit:.3e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("non-finite state at step {step} (t = {t:.6})")]
    NonFinite { step: usize, t: f64 },

    #[error("linear algebra: {0}")]
    Linalg(String),

    #[error("eigensolver did not converge: residual {residual:.3e}")]
    EigenNoConvergence { residual: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("precondition: {0}")]
    Precondition(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
