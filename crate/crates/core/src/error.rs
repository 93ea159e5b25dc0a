use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KppError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("grid: {0}")]
    Grid(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("kernel too coarse: need h <= {max_h:.6e}, got {h:.6e}")]
    KernelTooCoarse { h: f64, max_h: f64 },
    #[error("non-integrable kernel profile: {0}")]
    NonIntegrable(String),
    #[error("infinite moment of order {0}")]
    InfiniteMoment(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("start is not a sub-solution (min residual {0:.3e})")]
    StartNotSubsolution(f64),
    #[error("monotonicity violated by {0:.3e}")]
    Monotonicity(f64),
    #[error("residual check failed: {0}")]
    ResidualGate(String),
    #[error("search budget exhausted: {0}")]
    Budget(String),
}

pub type Result<T> = std::result::Result<T, KppError>;
