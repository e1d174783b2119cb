//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Polynomial degree above the configured cap; exact construction would
    /// lose integrity and the monomial representation its conditioning.
    #[error("degree overflow: degree {degree} exceeds cap {cap}")]
    DegreeOverflow { degree: usize, cap: usize },

    /// Root search for collocation nodes failed to converge.
    #[error("node search did not converge for N = {n} (residual {residual:.3e})")]
    NodeSearchFailed { n: usize, residual: f64 },

    /// Normalized time outside [-1, 1].
    #[error("normalized time {tau} outside [-1, 1]")]
    TauOutOfRange { tau: f64 },

    /// Empty or reversed hull region.
    #[error("degenerate region [{lo}, {hi}]")]
    DegenerateRegion { lo: f64, hi: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Vehicle at the curvature center: 1 - kappa*w <= 0.
    #[error("curvilinear singularity: 1 - kappa*w = {value:.3e} at s = {s:.3}")]
    CurvilinearSingularity { value: f64, s: f64 },

    /// Cartesian pose could not be projected onto the path corridor.
    #[error("off-path: projection did not converge near s = {s_guess:.3}")]
    OffPath { s_guess: f64 },

    /// Dimension mismatch while assembling or evaluating an NLP.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// QP subproblem reported infeasibility and softening did not recover.
    #[error("QP infeasible: {0}")]
    QpInfeasible(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    /// Scenario file or config file problem (I/O, syntax, schema, invariants).
    #[error("scenario error: {0}")]
    Scenario(String),

    /// Plant state left its validity domain mid-simulation.
    #[error("simulation aborted at t = {t:.3}: {reason}")]
    SimulationAborted { t: f64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
