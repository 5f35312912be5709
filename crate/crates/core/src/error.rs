use thiserror::Error;

/// Errors raised by the estimation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("{what}: relative disagreement {rel_err:.3e} exceeds tolerance {tolerance:.3e}")]
    Convergence {
        what: &'static str,
        rel_err: f64,
        tolerance: f64,
    },

    #[error("covariance lost positive definiteness at t = {t}")]
    NotPositiveDefinite { t: f64 },

    #[error("degenerate window: {points} points (need at least 3)")]
    DegenerateWindow { points: usize },

    #[error("window outside the Gaussian validity region: kappa*t = {kappa_t} > {threshold}")]
    OutsideValidity { kappa_t: f64, threshold: f64 },

    #[error("non-positive value encountered in log-log fit: {0}")]
    NonPositive(f64),

    #[error("record mismatch: {0}")]
    RecordMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("posterior mass {mass:.3} piled at the {side} boundary of the grid")]
    BoundaryMass { side: &'static str, mass: f64 },

    #[error("posterior is degenerate (fewer than two grid points carry mass)")]
    DegeneratePosterior,

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("total spin must be a positive half-integer, got {0}")]
    InvalidSpin(f64),

    #[error("Hilbert-space dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("state lost positivity at t = {t} (min eigenvalue {min_eigenvalue:.3e})")]
    PositivityLoss { t: f64, min_eigenvalue: f64 },

    #[error("finite-difference failure: {0}")]
    FiniteDifference(String),

    #[error("insufficient trajectories: {0}")]
    InsufficientTrajectories(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_time(t: f64) -> Result<()> {
    if !t.is_finite() {
        return Err(Error::NonFinite("time"));
    }
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    Ok(())
}
