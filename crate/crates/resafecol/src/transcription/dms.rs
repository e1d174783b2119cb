//! Direct multiple shooting: states and inputs at equidistant nodes, RK4
//! integration with piecewise-linear control interpolation over each
//! interval, trapezoidal stage cost, and node-only inequality constraints.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ocp::OcpSpec;
use crate::safety::barrier_h;
use crate::solver::SparseRows;
use crate::vehicle::Dynamics;

use super::{ConstraintBlock, Layout, NlpMeta, NlpProblem, QuadraticCost};

/// Direct-multiple-shooting transcriber. Decision variables are states and
/// inputs at `n_nodes` equidistant time points, interleaved per node for a
/// banded constraint structure.
#[derive(Debug, Clone)]
pub struct DmsTranscriber {
    nx: usize,
    nu: usize,
    t_f: f64,
    n_nodes: usize,
    substeps: usize,
}

impl DmsTranscriber {
    pub fn new(nx: usize, nu: usize, t_f: f64, n_nodes: usize, substeps: usize) -> Result<Self> {
        if n_nodes < 2 {
            return Err(Error::InvalidArgument(
                "multiple shooting needs at least two nodes".into(),
            ));
        }
        if substeps == 0 {
            return Err(Error::InvalidArgument(
                "integrator needs at least one substep".into(),
            ));
        }
        if !(t_f > 0.0) {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        Ok(Self {
            nx,
            nu,
            t_f,
            n_nodes,
            substeps,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    fn vars_per_node(&self) -> usize {
        self.nx + self.nu
    }

    pub fn primal_dim(&self) -> usize {
        self.n_nodes * self.vars_per_node()
    }

    pub fn state_offset(&self, node: usize) -> usize {
        node * self.vars_per_node()
    }

    pub fn input_offset(&self, node: usize) -> usize {
        node * self.vars_per_node() + self.nx
    }

    pub fn state_at_node(&self, z: &DVector<f64>, node: usize) -> DVector<f64> {
        z.rows(self.state_offset(node), self.nx).into_owned()
    }

    pub fn input_at_node(&self, z: &DVector<f64>, node: usize) -> DVector<f64> {
        z.rows(self.input_offset(node), self.nu).into_owned()
    }

    /// Node spacing in seconds.
    pub fn dt(&self) -> f64 {
        self.t_f / (self.n_nodes - 1) as f64
    }

    /// Warm start: shift node trajectories by `dt_shift` seconds via linear
    /// interpolation, holding the final values.
    pub fn shift_initial_guess(&self, z: &DVector<f64>, dt_shift: f64) -> DVector<f64> {
        let dt = self.dt();
        let mut out = z.clone();
        for node in 0..self.n_nodes {
            let t = node as f64 * dt + dt_shift;
            let pos = (t / dt).clamp(0.0, (self.n_nodes - 1) as f64);
            let i = (pos.floor() as usize).min(self.n_nodes - 2);
            let frac = pos - i as f64;
            for c in 0..self.nx {
                let a = z[self.state_offset(i) + c];
                let b = z[self.state_offset(i + 1) + c];
                out[self.state_offset(node) + c] = a + frac * (b - a);
            }
            for c in 0..self.nu {
                let a = z[self.input_offset(i) + c];
                let b = z[self.input_offset(i + 1) + c];
                out[self.input_offset(node) + c] = a + frac * (b - a);
            }
        }
        out
    }

    pub fn transcribe(&self, ocp: &OcpSpec) -> Result<NlpProblem> {
        ocp.validate()?;
        if ocp.state_dim() != self.nx || ocp.input_dim() != self.nu {
            return Err(Error::DimensionMismatch(
                "OCP dimensions disagree with the transcriber".into(),
            ));
        }
        if (ocp.t_f - self.t_f).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "transcriber built for t_f = {}, OCP has {}",
                self.t_f, ocp.t_f
            )));
        }
        if ocp.constraints.iter().any(|c| c.gains.is_some()) {
            return Err(Error::InvalidArgument(
                "CBF rows need spline derivatives; use a collocation method".into(),
            ));
        }

        let mut layout = Layout::default();
        for node in 0..self.n_nodes {
            layout.push(format!("x[{node}]"), self.nx);
            layout.push(format!("u[{node}]"), self.nu);
        }
        let dim = layout.dim();

        let cost = self.build_cost(ocp, dim);
        let equality = ShootingGaps {
            trans: self.clone(),
            dynamics: ocp.dynamics.clone(),
            initial_state: ocp.initial_state.clone(),
            zeros: DVector::zeros(self.nx * self.n_nodes),
        };
        let eq_rows = equality.dim();
        let inequality = DmsInequalities::build(self, ocp);
        let ineq_rows = inequality.dim();

        let mut init = DVector::zeros(dim);
        for node in 0..self.n_nodes {
            for c in 0..self.nx {
                init[self.state_offset(node) + c] = ocp.initial_state[c];
            }
        }

        Ok(NlpProblem {
            meta: NlpMeta {
                method: format!("dms({} nodes)", self.n_nodes),
                primal_dim: dim,
                slack_dim: 0,
                equality_rows: eq_rows,
                inequality_rows: ineq_rows,
            },
            layout,
            cost,
            equality: Box::new(equality),
            inequality: Box::new(inequality),
            slack_range: None,
            default_init: init,
            warm_start: None,
        })
    }

    fn build_cost(&self, ocp: &OcpSpec, dim: usize) -> QuadraticCost {
        let mut cost = QuadraticCost::zeros(dim);
        let dt = self.dt();
        for node in 0..self.n_nodes {
            let tau = -1.0 + 2.0 * node as f64 / (self.n_nodes - 1) as f64;
            let x_ref = ocp.reference.at(tau);
            // Trapezoidal weights.
            let mut weight = if node == 0 || node == self.n_nodes - 1 {
                0.5 * dt
            } else {
                dt
            };
            for c in 0..self.nx {
                let mut q = weight * ocp.q_diag[c];
                if node == self.n_nodes - 1 {
                    q += ocp.terminal_diag[c];
                }
                if q > 0.0 {
                    let i = self.state_offset(node) + c;
                    cost.hessian[(i, i)] += 2.0 * q;
                    cost.gradient0[i] -= 2.0 * q * x_ref[c];
                    cost.constant += q * x_ref[c] * x_ref[c];
                }
            }
            weight = if node == 0 || node == self.n_nodes - 1 {
                0.5 * dt
            } else {
                dt
            };
            for c in 0..self.nu {
                let r = weight * ocp.r_diag[c];
                let i = self.input_offset(node) + c;
                cost.hessian[(i, i)] += 2.0 * r;
            }
        }
        cost
    }

    /// RK4 over one interval with linear control interpolation; returns the
    /// end state and its sensitivities to the start state and the two node
    /// controls.
    fn integrate_interval(
        &self,
        dynamics: &dyn Dynamics,
        x0: &DVector<f64>,
        u_a: &DVector<f64>,
        u_b: &DVector<f64>,
        with_sensitivities: bool,
    ) -> (
        DVector<f64>,
        Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)>,
    ) {
        let nx = self.nx;
        let h = self.dt() / self.substeps as f64;
        let mut x = x0.clone();
        let mut sens = if with_sensitivities {
            Some((
                DMatrix::identity(nx, nx),
                DMatrix::zeros(nx, self.nu),
                DMatrix::zeros(nx, self.nu),
            ))
        } else {
            None
        };

        for m in 0..self.substeps {
            // Fractions of the whole interval at the three stage times.
            let th0 = m as f64 / self.substeps as f64;
            let th_mid = (m as f64 + 0.5) / self.substeps as f64;
            let th1 = (m as f64 + 1.0) / self.substeps as f64;
            let u_at = |th: f64| u_a * (1.0 - th) + u_b * th;
            let u0 = u_at(th0);
            let u_mid = u_at(th_mid);
            let u1 = u_at(th1);

            let k1 = dynamics.rhs(&x, &u0);
            let x2 = &x + &k1 * (h / 2.0);
            let k2 = dynamics.rhs(&x2, &u_mid);
            let x3 = &x + &k2 * (h / 2.0);
            let k3 = dynamics.rhs(&x3, &u_mid);
            let x4 = &x + &k3 * h;
            let k4 = dynamics.rhs(&x4, &u1);

            if let Some((sx, sa, sb)) = sens.as_mut() {
                let (a1, b1) = dynamics.jacobians(&x, &u0);
                let (a2, b2) = dynamics.jacobians(&x2, &u_mid);
                let (a3, b3) = dynamics.jacobians(&x3, &u_mid);
                let (a4, b4) = dynamics.jacobians(&x4, &u1);
                let eye = DMatrix::identity(nx, nx);

                // Stage sensitivities with respect to the substep's start
                // state and the interval's node controls.
                let k1x = a1.clone();
                let k2x = &a2 * (&eye + &k1x * (h / 2.0));
                let k3x = &a3 * (&eye + &k2x * (h / 2.0));
                let k4x = &a4 * (&eye + &k3x * h);
                let step_x = &eye + (&k1x + &k2x * 2.0 + &k3x * 2.0 + &k4x) * (h / 6.0);

                let stage_u = |bmat: &DMatrix<f64>, th: f64, prev: &DMatrix<f64>, amat: &DMatrix<f64>, hh: f64, weight_a: bool| -> DMatrix<f64> {
                    let direct = bmat * if weight_a { 1.0 - th } else { th };
                    amat * prev * hh + direct
                };
                // d k_i / d u_a
                let k1a = stage_u(&b1, th0, &DMatrix::zeros(nx, self.nu), &a1, 0.0, true);
                let k2a = stage_u(&b2, th_mid, &k1a, &a2, h / 2.0, true);
                let k3a = stage_u(&b3, th_mid, &k2a, &a3, h / 2.0, true);
                let k4a = stage_u(&b4, th1, &k3a, &a4, h, true);
                let step_a = (&k1a + &k2a * 2.0 + &k3a * 2.0 + &k4a) * (h / 6.0);
                // d k_i / d u_b
                let k1b = stage_u(&b1, th0, &DMatrix::zeros(nx, self.nu), &a1, 0.0, false);
                let k2b = stage_u(&b2, th_mid, &k1b, &a2, h / 2.0, false);
                let k3b = stage_u(&b3, th_mid, &k2b, &a3, h / 2.0, false);
                let k4b = stage_u(&b4, th1, &k3b, &a4, h, false);
                let step_b = (&k1b + &k2b * 2.0 + &k3b * 2.0 + &k4b) * (h / 6.0);

                *sa = &step_x * &*sa + step_a;
                *sb = &step_x * &*sb + step_b;
                *sx = &step_x * &*sx;
            }

            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        (x, sens)
    }
}

struct ShootingGaps {
    trans: DmsTranscriber,
    dynamics: Arc<dyn Dynamics>,
    initial_state: DVector<f64>,
    zeros: DVector<f64>,
}

impl ConstraintBlock for ShootingGaps {
    fn dim(&self) -> usize {
        self.zeros.len()
    }

    fn eval(&self, z: &DVector<f64>) -> DVector<f64> {
        let t = &self.trans;
        let nx = t.nx;
        let mut out = DVector::zeros(self.dim());
        for c in 0..nx {
            out[c] = z[t.state_offset(0) + c] - self.initial_state[c];
        }
        for i in 0..t.n_nodes - 1 {
            let x_i = t.state_at_node(z, i);
            let u_a = t.input_at_node(z, i);
            let u_b = t.input_at_node(z, i + 1);
            let (x_end, _) = t.integrate_interval(&*self.dynamics, &x_i, &u_a, &u_b, false);
            for c in 0..nx {
                out[nx * (i + 1) + c] = z[t.state_offset(i + 1) + c] - x_end[c];
            }
        }
        out
    }

    fn jacobian(&self, z: &DVector<f64>) -> SparseRows {
        let t = &self.trans;
        let nx = t.nx;
        let nu = t.nu;
        let mut jac = SparseRows::with_capacity(self.dim(), z.len());
        for c in 0..nx {
            jac.push_row(vec![(t.state_offset(0) + c, 1.0)]);
        }
        for i in 0..t.n_nodes - 1 {
            let x_i = t.state_at_node(z, i);
            let u_a = t.input_at_node(z, i);
            let u_b = t.input_at_node(z, i + 1);
            let (_, sens) = t.integrate_interval(&*self.dynamics, &x_i, &u_a, &u_b, true);
            let (sx, sa, sb) = sens.unwrap();
            for c in 0..nx {
                let mut row = Vec::with_capacity(nx + 2 * nu + 1);
                row.push((t.state_offset(i + 1) + c, 1.0));
                for c2 in 0..nx {
                    let v = -sx[(c, c2)];
                    if v != 0.0 {
                        row.push((t.state_offset(i) + c2, v));
                    }
                }
                for j in 0..nu {
                    let v = -sa[(c, j)];
                    if v != 0.0 {
                        row.push((t.input_offset(i) + j, v));
                    }
                    let v = -sb[(c, j)];
                    if v != 0.0 {
                        row.push((t.input_offset(i + 1) + j, v));
                    }
                }
                jac.push_row(row);
            }
        }
        jac
    }

    fn lower(&self) -> &DVector<f64> {
        &self.zeros
    }

    fn upper(&self) -> &DVector<f64> {
        &self.zeros
    }
}

enum DmsRow {
    Bound { index: usize },
    Barrier { ci: usize, node: usize },
}

struct DmsInequalities {
    trans: DmsTranscriber,
    constraints: Vec<crate::ocp::BarrierConstraint>,
    rows: Vec<DmsRow>,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl DmsInequalities {
    fn build(trans: &DmsTranscriber, ocp: &OcpSpec) -> Self {
        let mut rows = Vec::new();
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for node in 0..trans.n_nodes {
            for c in 0..trans.nx {
                let (mut lo, mut hi) = (ocp.x_lower[c], ocp.x_upper[c]);
                if node == trans.n_nodes - 1 {
                    lo = lo.max(ocp.terminal_lower[c]);
                    hi = hi.min(ocp.terminal_upper[c]);
                }
                if lo.is_infinite() && hi.is_infinite() {
                    continue;
                }
                rows.push(DmsRow::Bound {
                    index: trans.state_offset(node) + c,
                });
                lower.push(lo);
                upper.push(hi);
            }
            for c in 0..trans.nu {
                let (lo, hi) = (ocp.u_lower[c], ocp.u_upper[c]);
                if lo.is_infinite() && hi.is_infinite() {
                    continue;
                }
                rows.push(DmsRow::Bound {
                    index: trans.input_offset(node) + c,
                });
                lower.push(lo);
                upper.push(hi);
            }
        }
        for (ci, _) in ocp.constraints.iter().enumerate() {
            for node in 0..trans.n_nodes {
                rows.push(DmsRow::Barrier { ci, node });
                lower.push(0.0);
                upper.push(f64::INFINITY);
            }
        }
        Self {
            trans: trans.clone(),
            constraints: ocp.constraints.clone(),
            rows,
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
        }
    }

    fn node_time(&self, node: usize) -> f64 {
        self.trans.dt() * node as f64
    }
}

impl ConstraintBlock for DmsInequalities {
    fn dim(&self) -> usize {
        self.rows.len()
    }

    fn eval(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.rows.len(), |r, _| match &self.rows[r] {
            DmsRow::Bound { index } => z[*index],
            DmsRow::Barrier { ci, node } => {
                let c = &self.constraints[*ci];
                let s = z[self.trans.state_offset(*node) + c.s_index];
                let w = z[self.trans.state_offset(*node) + c.w_index];
                barrier_h(s, w, &c.obstacle, self.node_time(*node))
            }
        })
    }

    fn jacobian(&self, z: &DVector<f64>) -> SparseRows {
        let mut jac = SparseRows::with_capacity(self.rows.len(), z.len());
        for row in &self.rows {
            match row {
                DmsRow::Bound { index } => jac.push_row(vec![(*index, 1.0)]),
                DmsRow::Barrier { ci, node } => {
                    let c = &self.constraints[*ci];
                    let si = self.trans.state_offset(*node) + c.s_index;
                    let wi = self.trans.state_offset(*node) + c.w_index;
                    let (s_obs, w_obs) = c.obstacle.center_at(self.node_time(*node));
                    let gs = 2.0 * (z[si] - s_obs) / (c.obstacle.a * c.obstacle.a);
                    let gw = 2.0 * (z[wi] - w_obs) / (c.obstacle.b * c.obstacle.b);
                    jac.push_row(vec![(si, gs), (wi, gw)]);
                }
            }
        }
        jac
    }

    fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    fn upper(&self) -> &DVector<f64> {
        &self.upper
    }
}

/// Transcribe via direct multiple shooting with `n_nodes` nodes and the
/// given number of RK4 substeps per interval.
pub fn transcribe_dms(ocp: &OcpSpec, n_nodes: usize, substeps: usize) -> Result<NlpProblem> {
    DmsTranscriber::new(ocp.state_dim(), ocp.input_dim(), ocp.t_f, n_nodes, substeps)?
        .transcribe(ocp)
}
