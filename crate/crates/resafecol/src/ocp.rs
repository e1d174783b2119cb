//! Continuous-time optimal control problem description, shared by all three
//! transcriptions.
//!
//! The problem minimizes a quadratic stage cost plus an optional quadratic
//! terminal cost over a horizon `[0, t_f]`, subject to the dynamics, box
//! bounds on states and inputs, optional terminal bounds, and a list of
//! ellipsoidal collision constraints (with or without their exponential CBF
//! counterpart).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::safety::{CbfGains, ObstacleEllipse};
use crate::vehicle::Dynamics;

/// Reference trajectory in normalized time `tau in [-1, 1]`.
#[derive(Clone)]
pub enum Reference {
    Constant(DVector<f64>),
    Function(Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>),
}

impl Reference {
    pub fn at(&self, tau: f64) -> DVector<f64> {
        match self {
            Reference::Constant(v) => v.clone(),
            Reference::Function(f) => f(tau),
        }
    }
}

impl std::fmt::Debug for Reference {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Reference::Constant(v) => write!(f, "Reference::Constant({v:?})"),
            Reference::Function(_) => write!(f, "Reference::Function(..)"),
        }
    }
}

/// One ellipsoidal collision constraint: the barrier row is always added;
/// `gains` additionally adds the exponential CBF row.
#[derive(Debug, Clone)]
pub struct BarrierConstraint {
    pub obstacle: ObstacleEllipse,
    pub gains: Option<CbfGains>,
    /// State channels carrying path progress and lateral offset.
    pub s_index: usize,
    pub w_index: usize,
}

/// The continuous-time Bolza problem.
#[derive(Clone)]
pub struct OcpSpec {
    pub dynamics: Arc<dyn Dynamics>,
    /// Diagonal of the state weighting matrix (PSD).
    pub q_diag: DVector<f64>,
    /// Diagonal of the input weighting matrix (PD).
    pub r_diag: DVector<f64>,
    /// Diagonal terminal weight; zero by default.
    pub terminal_diag: DVector<f64>,
    pub reference: Reference,
    pub initial_state: DVector<f64>,
    pub x_lower: DVector<f64>,
    pub x_upper: DVector<f64>,
    pub u_lower: DVector<f64>,
    pub u_upper: DVector<f64>,
    /// Optional box on the terminal state (equalities when lower == upper).
    pub terminal_lower: DVector<f64>,
    pub terminal_upper: DVector<f64>,
    pub constraints: Vec<BarrierConstraint>,
    /// Horizon length [s].
    pub t_f: f64,
}

impl std::fmt::Debug for OcpSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OcpSpec")
            .field("state_dim", &self.state_dim())
            .field("input_dim", &self.input_dim())
            .field("t_f", &self.t_f)
            .field("constraints", &self.constraints.len())
            .finish()
    }
}

fn unbounded(n: usize, sign: f64) -> DVector<f64> {
    DVector::from_element(n, sign * f64::INFINITY)
}

impl OcpSpec {
    /// A problem skeleton with zero state weights, unit input weights, free
    /// bounds, zero reference and zero initial state.
    pub fn new(dynamics: Arc<dyn Dynamics>, t_f: f64) -> Result<Self> {
        if !(t_f > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {t_f}"
            )));
        }
        let nx = dynamics.state_dim();
        let nu = dynamics.input_dim();
        Ok(Self {
            dynamics,
            q_diag: DVector::zeros(nx),
            r_diag: DVector::from_element(nu, 1.0),
            terminal_diag: DVector::zeros(nx),
            reference: Reference::Constant(DVector::zeros(nx)),
            initial_state: DVector::zeros(nx),
            x_lower: unbounded(nx, -1.0),
            x_upper: unbounded(nx, 1.0),
            u_lower: unbounded(nu, -1.0),
            u_upper: unbounded(nu, 1.0),
            terminal_lower: unbounded(nx, -1.0),
            terminal_upper: unbounded(nx, 1.0),
            constraints: Vec::new(),
            t_f,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }

    /// Check weight signs and dimension consistency.
    pub fn validate(&self) -> Result<()> {
        let nx = self.state_dim();
        let nu = self.input_dim();
        let dims_ok = self.q_diag.len() == nx
            && self.r_diag.len() == nu
            && self.terminal_diag.len() == nx
            && self.initial_state.len() == nx
            && self.x_lower.len() == nx
            && self.x_upper.len() == nx
            && self.u_lower.len() == nu
            && self.u_upper.len() == nu
            && self.terminal_lower.len() == nx
            && self.terminal_upper.len() == nx;
        if !dims_ok {
            return Err(Error::DimensionMismatch(
                "OCP field dimensions disagree with the dynamics".into(),
            ));
        }
        if self.q_diag.iter().any(|&q| q < 0.0) || self.terminal_diag.iter().any(|&q| q < 0.0) {
            return Err(Error::InvalidArgument(
                "state weights must be nonnegative".into(),
            ));
        }
        if self.r_diag.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::InvalidArgument(
                "input weights must be positive".into(),
            ));
        }
        if !(self.t_f > 0.0) {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        for c in &self.constraints {
            if c.s_index >= nx || c.w_index >= nx {
                return Err(Error::DimensionMismatch(
                    "barrier channel index out of range".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Quadratic stage cost `||x - x_ref||^2_Q + ||u||^2_R` with diagonal
/// weights.
pub fn stage_cost(
    x: &DVector<f64>,
    u: &DVector<f64>,
    x_ref: &DVector<f64>,
    q_diag: &DVector<f64>,
    r_diag: &DVector<f64>,
) -> f64 {
    let mut cost = 0.0;
    for i in 0..x.len() {
        let d = x[i] - x_ref[i];
        cost += q_diag[i] * d * d;
    }
    for j in 0..u.len() {
        cost += r_diag[j] * u[j] * u[j];
    }
    cost
}

// ---------------------------------------------------------------------------
// Toy dynamics for oracle problems
// ---------------------------------------------------------------------------

/// `pos_dot = vel, vel_dot = u`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DoubleIntegrator;

impl Dynamics for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[1], u[0]])
    }

    fn jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 1)] = 1.0;
        let mut b = DMatrix::zeros(2, 1);
        b[(1, 0)] = 1.0;
        (a, b)
    }
}

/// `x_dot = u`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SingleIntegrator;

impl Dynamics for SingleIntegrator {
    fn state_dim(&self) -> usize {
        1
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn rhs(&self, _x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![u[0]])
    }

    fn jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (DMatrix::zeros(1, 1), DMatrix::identity(1, 1))
    }
}
