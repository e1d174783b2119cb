//! Transcription of the continuous-time OCP into finite-dimensional NLPs.
//!
//! Three methods are provided:
//!
//! - [`transcribe_resafecol`]: states and inputs are Legendre splines;
//!   dynamics enter as collocation defects at LGL nodes; every inequality is
//!   imposed on regional convex hulls of the splines so it holds over the
//!   whole horizon (nonlinear rows get second-order margins as penalized
//!   slacks).
//! - [`transcribe_dms`]: direct multiple shooting with RK4 integration,
//!   piecewise-linear control interpolation, and node-only constraints.
//! - [`transcribe_psc`]: the identical spline parameterization as
//!   `resafecol` but all inequalities only at the collocation nodes.
//!
//! The produced [`NlpProblem`] has an exactly quadratic cost (its Hessian is
//! the Gauss-Newton Hessian), one equality block, and one inequality block
//! with constant bounds; Jacobians are sparse by rows.

mod dms;
mod resafecol;
mod spline;

pub use dms::{transcribe_dms, DmsTranscriber};
pub use resafecol::{transcribe_psc, transcribe_resafecol, ResafecolTranscriber, SplineMode};
pub use spline::SplineContext;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::solver::SparseRows;

/// Named, contiguous blocks of the decision vector.
#[derive(Debug, Clone, Default)]
pub struct Layout {
    blocks: Vec<(String, std::ops::Range<usize>)>,
    dim: usize,
}

impl Layout {
    pub fn push(&mut self, name: impl Into<String>, len: usize) -> std::ops::Range<usize> {
        let range = self.dim..self.dim + len;
        self.blocks.push((name.into(), range.clone()));
        self.dim += len;
        range
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block(&self, name: &str) -> Option<std::ops::Range<usize>> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r.clone())
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&str, std::ops::Range<usize>)> {
        self.blocks.iter().map(|(n, r)| (n.as_str(), r.clone()))
    }
}

/// Exactly quadratic cost `1/2 z^T H z + g^T z + c`.
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    pub hessian: DMatrix<f64>,
    pub gradient0: DVector<f64>,
    pub constant: f64,
}

impl QuadraticCost {
    pub fn zeros(dim: usize) -> Self {
        Self {
            hessian: DMatrix::zeros(dim, dim),
            gradient0: DVector::zeros(dim),
            constant: 0.0,
        }
    }

    pub fn value(&self, z: &DVector<f64>) -> f64 {
        0.5 * (z.transpose() * &self.hessian * z)[(0, 0)] + self.gradient0.dot(z) + self.constant
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.hessian * z + &self.gradient0
    }
}

/// A block of constraints `lower <= c(z) <= upper` with constant bounds.
/// Equality rows set `lower == upper`.
pub trait ConstraintBlock: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, z: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, z: &DVector<f64>) -> SparseRows;
    fn lower(&self) -> &DVector<f64>;
    fn upper(&self) -> &DVector<f64>;
}

/// An empty constraint block.
pub struct NoConstraints {
    ncols: usize,
    bounds: DVector<f64>,
}

impl NoConstraints {
    pub fn new(ncols: usize) -> Self {
        Self {
            ncols,
            bounds: DVector::zeros(0),
        }
    }
}

impl ConstraintBlock for NoConstraints {
    fn dim(&self) -> usize {
        0
    }

    fn eval(&self, _z: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn jacobian(&self, _z: &DVector<f64>) -> SparseRows {
        SparseRows::new(self.ncols)
    }

    fn lower(&self) -> &DVector<f64> {
        &self.bounds
    }

    fn upper(&self) -> &DVector<f64> {
        &self.bounds
    }
}

/// Descriptive counts for reporting and benchmark tables.
#[derive(Debug, Clone)]
pub struct NlpMeta {
    pub method: String,
    pub primal_dim: usize,
    pub slack_dim: usize,
    pub equality_rows: usize,
    pub inequality_rows: usize,
}

/// A transcribed NLP: quadratic cost, equality block, inequality block,
/// and a warm-start container.
pub struct NlpProblem {
    pub layout: Layout,
    pub cost: QuadraticCost,
    pub equality: Box<dyn ConstraintBlock>,
    pub inequality: Box<dyn ConstraintBlock>,
    /// Range of slack variables inside the decision vector, if any.
    pub slack_range: Option<std::ops::Range<usize>>,
    /// Plain initial guess used when no warm start is available.
    pub default_init: DVector<f64>,
    /// Warm-start iterate carried over from a previous related solve.
    pub warm_start: Option<DVector<f64>>,
    pub meta: NlpMeta,
}

impl NlpProblem {
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// Slack entries of a solution vector (empty when the method has none).
    pub fn slack_values<'z>(&self, z: &'z DVector<f64>) -> &'z [f64] {
        match &self.slack_range {
            Some(r) => &z.as_slice()[r.clone()],
            None => &[],
        }
    }

    /// Worst violation of both constraint blocks at `z`.
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        let ce = self.equality.eval(z);
        for i in 0..ce.len() {
            worst = worst.max((ce[i] - self.equality.lower()[i]).abs());
        }
        let ci = self.inequality.eval(z);
        for i in 0..ci.len() {
            worst = worst.max(self.inequality.lower()[i] - ci[i]);
            worst = worst.max(ci[i] - self.inequality.upper()[i]);
        }
        worst
    }

    pub fn validate_point(&self, z: &DVector<f64>) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has {} entries, NLP has {}",
                z.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

impl std::fmt::Debug for NlpProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NlpProblem")
            .field("meta", &self.meta)
            .finish()
    }
}

/// Central finite-difference check of a constraint block's Jacobian;
/// returns the worst relative mismatch.
pub fn fd_jacobian_error(block: &dyn ConstraintBlock, z: &DVector<f64>, h: f64) -> f64 {
    let jac = block.jacobian(z).to_dense();
    let mut fd = DMatrix::zeros(block.dim(), z.len());
    for col in 0..z.len() {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[col] += h;
        zm[col] -= h;
        let d = (block.eval(&zp) - block.eval(&zm)) / (2.0 * h);
        fd.column_mut(col).copy_from(&d);
    }
    let scale = jac.amax().max(1.0);
    (jac - fd).amax() / scale
}

/// Central finite-difference check of the cost gradient.
pub fn fd_gradient_error(cost: &QuadraticCost, z: &DVector<f64>, h: f64) -> f64 {
    let grad = cost.gradient(z);
    let mut fd = DVector::zeros(z.len());
    for col in 0..z.len() {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[col] += h;
        zm[col] -= h;
        fd[col] = (cost.value(&zp) - cost.value(&zm)) / (2.0 * h);
    }
    let scale = grad.amax().max(1.0);
    (grad - fd).amax() / scale
}
