//! Spline-based transcriptions: regional-hull collocation and its
//! node-only pseudospectral counterpart.
//!
//! Both share the parameterization, cost quadrature, and collocation
//! defects; they differ only in how inequality constraints are imposed:
//!
//! - regional hulls: every box, barrier, and CBF row is written on the
//!   entries of the regional convex hulls, so feasibility extends to all of
//!   continuous time. Nonlinear rows are tightened by their second-order
//!   margin, relaxed through a penalized slack per obstacle and region.
//! - nodes only: the same rows are written at the collocation nodes, which
//!   leaves the inter-node behavior unconstrained.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::envelope::HullMatrixSet;
use crate::error::{Error, Result};
use crate::ocp::{BarrierConstraint, OcpSpec};
use crate::safety::{barrier_h, barrier_rates, cbf_hessian_bound, cbf_residual};
use crate::solver::SparseRows;
use crate::vehicle::Dynamics;

use super::spline::SplineContext;
use super::{ConstraintBlock, Layout, NlpMeta, NlpProblem, QuadraticCost};

/// Default quadratic penalty weight on the second-order margin slacks.
pub const DEFAULT_SLACK_PENALTY: f64 = 1e3;

/// How inequality rows are imposed on the spline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplineMode {
    /// Regional convex hulls with `regions` sub-intervals.
    RegionalHulls { regions: usize },
    /// Collocation nodes only.
    NodesOnly,
}

/// Transcriber for the spline methods; precomputes basis, grid, and hull
/// matrices once so repeated NMPC cycles only rebuild the thin NLP closures.
#[derive(Debug, Clone)]
pub struct ResafecolTranscriber {
    ctx: Arc<SplineContext>,
    hulls: Option<Arc<HullMatrixSet>>,
    pub slack_penalty: f64,
}

impl ResafecolTranscriber {
    /// Regional-hull transcription with `regions` hull regions.
    pub fn new(
        nx: usize,
        nu: usize,
        t_f: f64,
        degree: usize,
        nodes: usize,
        regions: usize,
    ) -> Result<Self> {
        let ctx = Arc::new(SplineContext::new(nx, nu, t_f, degree, nodes)?);
        let hulls = Arc::new(HullMatrixSet::with_default_regions(&ctx.basis, regions)?);
        Ok(Self {
            ctx,
            hulls: Some(hulls),
            slack_penalty: DEFAULT_SLACK_PENALTY,
        })
    }

    /// Node-only (pseudospectral) transcription.
    pub fn new_nodes_only(
        nx: usize,
        nu: usize,
        t_f: f64,
        degree: usize,
        nodes: usize,
    ) -> Result<Self> {
        let ctx = Arc::new(SplineContext::new(nx, nu, t_f, degree, nodes)?);
        Ok(Self {
            ctx,
            hulls: None,
            slack_penalty: DEFAULT_SLACK_PENALTY,
        })
    }

    pub fn mode(&self) -> SplineMode {
        match &self.hulls {
            Some(h) => SplineMode::RegionalHulls {
                regions: h.regions(),
            },
            None => SplineMode::NodesOnly,
        }
    }

    pub fn context(&self) -> &Arc<SplineContext> {
        &self.ctx
    }

    pub fn hulls(&self) -> Option<&Arc<HullMatrixSet>> {
        self.hulls.as_ref()
    }

    /// Shift a previous solution by `dt` seconds for warm starting the next
    /// cycle; slacks are reset.
    pub fn shift_initial_guess(&self, z: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
        let shift = self.ctx.shift_matrix(dt)?;
        let n = self.ctx.coeffs_per_channel();
        let mut out = z.clone();
        for c in 0..self.ctx.channels() {
            let off = self.ctx.channel_offset(c);
            let alpha = DVector::from_fn(n, |k, _| z[off + k]);
            let shifted = &shift * alpha;
            for k in 0..n {
                out[off + k] = shifted[k];
            }
        }
        for i in self.ctx.primal_dim()..out.len() {
            out[i] = 0.0;
        }
        Ok(out)
    }

    pub fn transcribe(&self, ocp: &OcpSpec) -> Result<NlpProblem> {
        ocp.validate()?;
        let ctx = &self.ctx;
        if ocp.state_dim() != ctx.nx || ocp.input_dim() != ctx.nu {
            return Err(Error::DimensionMismatch(
                "OCP dimensions disagree with the transcriber".into(),
            ));
        }
        if (ocp.t_f - ctx.t_f).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "transcriber built for t_f = {}, OCP has {}",
                ctx.t_f, ocp.t_f
            )));
        }

        // Decision layout: spline coefficients per channel, then slacks.
        let mut layout = Layout::default();
        for c in 0..ctx.nx {
            layout.push(format!("alpha_x[{c}]"), ctx.coeffs_per_channel());
        }
        for j in 0..ctx.nu {
            layout.push(format!("alpha_u[{j}]"), ctx.coeffs_per_channel());
        }
        let slack_range = if let Some(hulls) = &self.hulls {
            let mut n_slack = 0;
            for c in &ocp.constraints {
                n_slack += hulls.regions() * if c.gains.is_some() { 2 } else { 1 };
            }
            if n_slack > 0 {
                Some(layout.push("slack", n_slack))
            } else {
                None
            }
        } else {
            None
        };
        let dim = layout.dim();

        let cost = self.build_cost(ocp, dim, &slack_range);
        let equality = SplineDefects::new(ctx.clone(), ocp.dynamics.clone(), &ocp.initial_state);
        let eq_rows = equality.dim();
        let inequality =
            SplineInequalities::build(ctx.clone(), self.hulls.clone(), ocp, slack_range.clone())?;
        let ineq_rows = inequality.dim();

        // Constant spline at the initial state.
        let mut init = DVector::zeros(dim);
        for c in 0..ctx.nx {
            init[ctx.channel_offset(c)] = ocp.initial_state[c];
        }

        let method = match self.mode() {
            SplineMode::RegionalHulls { regions } => format!("resafecol(K={regions})"),
            SplineMode::NodesOnly => "psc".to_string(),
        };
        Ok(NlpProblem {
            meta: NlpMeta {
                method,
                primal_dim: ctx.primal_dim(),
                slack_dim: slack_range.as_ref().map_or(0, |r| r.len()),
                equality_rows: eq_rows,
                inequality_rows: ineq_rows,
            },
            layout,
            cost,
            equality: Box::new(equality),
            inequality: Box::new(inequality),
            slack_range,
            default_init: init,
            warm_start: None,
        })
    }

    fn build_cost(
        &self,
        ocp: &OcpSpec,
        dim: usize,
        slack_range: &Option<std::ops::Range<usize>>,
    ) -> QuadraticCost {
        let ctx = &self.ctx;
        let n = ctx.coeffs_per_channel();
        let mut cost = QuadraticCost::zeros(dim);

        // Gram matrix of the quadrature: sum_i w_i phi_i phi_i^T.
        let mut gram: DMatrix<f64> = DMatrix::zeros(n, n);
        for (i, phi) in ctx.phi.iter().enumerate() {
            let w = ctx.grid.weights[i];
            for a in 0..n {
                for b in 0..n {
                    gram[(a, b)] += w * phi[a] * phi[b];
                }
            }
        }

        let refs: Vec<DVector<f64>> = ctx
            .grid
            .nodes
            .iter()
            .map(|&tau| ocp.reference.at(tau))
            .collect();
        let ref_end = ocp.reference.at(1.0);

        for c in 0..ctx.channels() {
            let (weight, is_state) = if c < ctx.nx {
                (ocp.q_diag[c], true)
            } else {
                (ocp.r_diag[c - ctx.nx], false)
            };
            let off = ctx.channel_offset(c);
            if weight > 0.0 {
                let scale = ctx.t_f * weight;
                for a in 0..n {
                    for b in 0..n {
                        cost.hessian[(off + a, off + b)] += scale * gram[(a, b)];
                    }
                }
                if is_state {
                    for (i, phi) in ctx.phi.iter().enumerate() {
                        let w = ctx.grid.weights[i];
                        let r = refs[i][c];
                        if r != 0.0 {
                            for a in 0..n {
                                cost.gradient0[off + a] -= scale * w * r * phi[a];
                            }
                            cost.constant += 0.5 * scale * w * r * r;
                        }
                    }
                }
            }
            // Terminal quadratic weight on state channels.
            if is_state && ocp.terminal_diag[c] > 0.0 {
                let p = ocp.terminal_diag[c];
                let r = ref_end[c];
                for a in 0..n {
                    for b in 0..n {
                        cost.hessian[(off + a, off + b)] +=
                            2.0 * p * ctx.phi_end[a] * ctx.phi_end[b];
                    }
                    cost.gradient0[off + a] -= 2.0 * p * r * ctx.phi_end[a];
                }
                cost.constant += p * r * r;
            }
        }

        if let Some(range) = slack_range {
            for i in range.clone() {
                cost.hessian[(i, i)] = 2.0 * self.slack_penalty;
            }
        }
        cost
    }
}

/// Equality block: initial condition plus collocation defects at every
/// node except the first (where the initial-condition row replaces the
/// redundant defect row).
struct SplineDefects {
    ctx: Arc<SplineContext>,
    dynamics: Arc<dyn Dynamics>,
    initial_state: DVector<f64>,
    zeros: DVector<f64>,
}

impl SplineDefects {
    fn new(ctx: Arc<SplineContext>, dynamics: Arc<dyn Dynamics>, x0: &DVector<f64>) -> Self {
        let dim = ctx.nx * ctx.grid.len();
        Self {
            ctx,
            dynamics,
            initial_state: x0.clone(),
            zeros: DVector::zeros(dim),
        }
    }
}

impl ConstraintBlock for SplineDefects {
    fn dim(&self) -> usize {
        self.zeros.len()
    }

    fn eval(&self, z: &DVector<f64>) -> DVector<f64> {
        let ctx = &self.ctx;
        let nx = ctx.nx;
        let mut out = DVector::zeros(self.dim());
        for c in 0..nx {
            out[c] = ctx.channel_value(z, c, &ctx.phi_start) - self.initial_state[c];
        }
        let scale = ctx.t_f / 2.0;
        for i in 1..ctx.grid.len() {
            let x = ctx.state_at_node(z, i);
            let u = ctx.input_at_node(z, i);
            let f = self.dynamics.rhs(&x, &u);
            for c in 0..nx {
                out[nx * i + c] = ctx.channel_value(z, c, &ctx.phi_dot[i]) - scale * f[c];
            }
        }
        out
    }

    fn jacobian(&self, z: &DVector<f64>) -> SparseRows {
        let ctx = &self.ctx;
        let nx = ctx.nx;
        let nu = ctx.nu;
        let n = ctx.coeffs_per_channel();
        let mut jac = SparseRows::with_capacity(self.dim(), z.len());
        for c in 0..nx {
            let off = ctx.channel_offset(c);
            jac.push_row((0..n).map(|k| (off + k, ctx.phi_start[k])).collect());
        }
        let scale = ctx.t_f / 2.0;
        for i in 1..ctx.grid.len() {
            let x = ctx.state_at_node(z, i);
            let u = ctx.input_at_node(z, i);
            let (a, b) = self.dynamics.jacobians(&x, &u);
            let phi = &ctx.phi[i];
            let phi_dot = &ctx.phi_dot[i];
            for c in 0..nx {
                let mut row = Vec::with_capacity(n * (nx + nu));
                for c2 in 0..nx {
                    let off = ctx.channel_offset(c2);
                    let coef = -scale * a[(c, c2)];
                    if c2 == c {
                        for k in 0..n {
                            row.push((off + k, phi_dot[k] + coef * phi[k]));
                        }
                    } else if coef != 0.0 {
                        for k in 0..n {
                            row.push((off + k, coef * phi[k]));
                        }
                    }
                }
                for j in 0..nu {
                    let coef = -scale * b[(c, j)];
                    if coef != 0.0 {
                        let off = ctx.channel_offset(nx + j);
                        for k in 0..n {
                            row.push((off + k, coef * phi[k]));
                        }
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

/// One obstacle imposed on one region (hull mode) or one node (node mode).
struct BarrierGroup {
    constraint: BarrierConstraint,
    site: GroupSite,
    /// Slack variable indices for the h and CBF margins (hull mode only).
    h_slack: Option<usize>,
    cbf_slack: Option<usize>,
    /// Obstacle center sampling time [s].
    sample_time: f64,
}

enum GroupSite {
    Region(usize),
    Node(usize),
}

/// Inequality block shared by both spline modes.
struct SplineInequalities {
    ctx: Arc<SplineContext>,
    hulls: Option<Arc<HullMatrixSet>>,
    /// Constant-Jacobian rows: entries plus their bound index.
    box_rows: Vec<Vec<(usize, f64)>>,
    slack_nonneg: Vec<usize>,
    groups: Vec<BarrierGroup>,
    /// Scaled first/second derivative basis vectors at the nodes, for
    /// node-mode CBF rows.
    node_phi1: Vec<DVector<f64>>,
    node_phi2: Vec<DVector<f64>>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    dim: usize,
}

impl SplineInequalities {
    fn rows_per_group_kind(&self) -> usize {
        match self.hulls {
            Some(_) => self.ctx.coeffs_per_channel(),
            None => 1,
        }
    }

    fn build(
        ctx: Arc<SplineContext>,
        hulls: Option<Arc<HullMatrixSet>>,
        ocp: &OcpSpec,
        slack_range: Option<std::ops::Range<usize>>,
    ) -> Result<Self> {
        let n = ctx.coeffs_per_channel();
        let mut box_rows = Vec::new();
        let mut lower = Vec::new();
        let mut upper = Vec::new();

        let channel_bounds = |c: usize| -> (f64, f64) {
            if c < ctx.nx {
                (ocp.x_lower[c], ocp.x_upper[c])
            } else {
                (ocp.u_lower[c - ctx.nx], ocp.u_upper[c - ctx.nx])
            }
        };

        match &hulls {
            Some(hulls) => {
                // Hull box rows: every hull entry of every bounded channel.
                for c in 0..ctx.channels() {
                    let (lo, hi) = channel_bounds(c);
                    if lo.is_infinite() && hi.is_infinite() {
                        continue;
                    }
                    let off = ctx.channel_offset(c);
                    for k in 0..hulls.regions() {
                        let map = hulls.map(k, 0);
                        for j in 0..n {
                            box_rows
                                .push((0..n).map(|m| (off + m, map[(j, m)])).collect::<Vec<_>>());
                            lower.push(lo);
                            upper.push(hi);
                        }
                    }
                }
            }
            None => {
                // Node box rows.
                for c in 0..ctx.channels() {
                    let (lo, hi) = channel_bounds(c);
                    if lo.is_infinite() && hi.is_infinite() {
                        continue;
                    }
                    let off = ctx.channel_offset(c);
                    for phi in &ctx.phi {
                        box_rows.push((0..n).map(|m| (off + m, phi[m])).collect::<Vec<_>>());
                        lower.push(lo);
                        upper.push(hi);
                    }
                }
            }
        }

        // Terminal box rows on the state at tau = 1.
        for c in 0..ctx.nx {
            let (lo, hi) = (ocp.terminal_lower[c], ocp.terminal_upper[c]);
            if lo.is_infinite() && hi.is_infinite() {
                continue;
            }
            let off = ctx.channel_offset(c);
            box_rows.push((0..n).map(|m| (off + m, ctx.phi_end[m])).collect::<Vec<_>>());
            lower.push(lo);
            upper.push(hi);
        }

        // Slack nonnegativity.
        let mut slack_nonneg = Vec::new();
        if let Some(range) = &slack_range {
            for i in range.clone() {
                slack_nonneg.push(i);
                lower.push(0.0);
                upper.push(f64::INFINITY);
            }
        }

        // Barrier groups.
        let mut groups = Vec::new();
        let mut slack_cursor = slack_range.as_ref().map(|r| r.start);
        match &hulls {
            Some(hulls) => {
                for constraint in &ocp.constraints {
                    for k in 0..hulls.regions() {
                        let (tau_lo, tau_hi) = hulls.region_span(k);
                        let sample_time = (0.5 * (tau_lo + tau_hi) + 1.0) / 2.0 * ctx.t_f;
                        let cursor = slack_cursor.as_mut().unwrap();
                        let h_slack = Some(*cursor);
                        *cursor += 1;
                        let cbf_slack = if constraint.gains.is_some() {
                            let s = Some(*cursor);
                            *cursor += 1;
                            s
                        } else {
                            None
                        };
                        groups.push(BarrierGroup {
                            constraint: constraint.clone(),
                            site: GroupSite::Region(k),
                            h_slack,
                            cbf_slack,
                            sample_time,
                        });
                        for _ in 0..n {
                            lower.push(0.0);
                            upper.push(f64::INFINITY);
                        }
                        if constraint.gains.is_some() {
                            for _ in 0..n {
                                lower.push(0.0);
                                upper.push(f64::INFINITY);
                            }
                        }
                    }
                }
            }
            None => {
                for constraint in &ocp.constraints {
                    for (i, &tau) in ctx.grid.nodes.iter().enumerate() {
                        let sample_time = (tau + 1.0) / 2.0 * ctx.t_f;
                        groups.push(BarrierGroup {
                            constraint: constraint.clone(),
                            site: GroupSite::Node(i),
                            h_slack: None,
                            cbf_slack: None,
                            sample_time,
                        });
                        lower.push(0.0);
                        upper.push(f64::INFINITY);
                        if constraint.gains.is_some() {
                            lower.push(0.0);
                            upper.push(f64::INFINITY);
                        }
                    }
                }
            }
        }

        let scale1 = 2.0 / ctx.t_f;
        let node_phi1: Vec<DVector<f64>> = ctx
            .grid
            .nodes
            .iter()
            .map(|&tau| ctx.basis.eval_deriv(tau, 1) * scale1)
            .collect();
        let node_phi2: Vec<DVector<f64>> = ctx
            .grid
            .nodes
            .iter()
            .map(|&tau| ctx.basis.eval_deriv(tau, 2) * scale1 * scale1)
            .collect();

        let dim = lower.len();
        Ok(Self {
            ctx,
            hulls,
            box_rows,
            slack_nonneg,
            groups,
            node_phi1,
            node_phi2,
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
            dim,
        })
    }

    /// Hull values of one channel with the time-derivative scaling applied.
    fn hull_channel(
        &self,
        z: &DVector<f64>,
        region: usize,
        channel: usize,
        order: usize,
    ) -> DVector<f64> {
        let hulls = self.hulls.as_ref().unwrap();
        let ctx = &self.ctx;
        let n = ctx.coeffs_per_channel();
        let off = ctx.channel_offset(channel);
        let map = hulls.map(region, order);
        let scale = (2.0 / ctx.t_f).powi(order as i32);
        DVector::from_fn(n, |j, _| {
            scale * (0..n).map(|m| map[(j, m)] * z[off + m]).sum::<f64>()
        })
    }
}

fn range_and_extremes(values: &DVector<f64>) -> (f64, usize, usize) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut arg_lo = 0;
    let mut arg_hi = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < lo {
            lo = v;
            arg_lo = i;
        }
        if v > hi {
            hi = v;
            arg_hi = i;
        }
    }
    (hi - lo, arg_hi, arg_lo)
}

impl ConstraintBlock for SplineInequalities {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &DVector<f64>) -> DVector<f64> {
        let ctx = &self.ctx;
        let mut out = Vec::with_capacity(self.dim);
        for row in &self.box_rows {
            out.push(row.iter().map(|&(c, v)| v * z[c]).sum());
        }
        for &idx in &self.slack_nonneg {
            out.push(z[idx]);
        }
        let per_kind = self.rows_per_group_kind();
        for group in &self.groups {
            let obs = &group.constraint.obstacle;
            let t = group.sample_time;
            match group.site {
                GroupSite::Region(k) => {
                    let s_hull = self.hull_channel(z, k, group.constraint.s_index, 0);
                    let w_hull = self.hull_channel(z, k, group.constraint.w_index, 0);
                    let (rs, _, _) = range_and_extremes(&s_hull);
                    let (rw, _, _) = range_and_extremes(&w_hull);
                    let h_margin = 0.5 * obs.hessian_bound() * (rs * rs + rw * rw);
                    let h_slack = group.h_slack.map_or(0.0, |i| z[i]);
                    for j in 0..per_kind {
                        out.push(barrier_h(s_hull[j], w_hull[j], obs, t) - h_margin + h_slack);
                    }
                    if let Some(gains) = &group.constraint.gains {
                        let sd = self.hull_channel(z, k, group.constraint.s_index, 1);
                        let wd = self.hull_channel(z, k, group.constraint.w_index, 1);
                        let sdd = self.hull_channel(z, k, group.constraint.s_index, 2);
                        let wdd = self.hull_channel(z, k, group.constraint.w_index, 2);
                        let mut d2 = 0.0;
                        for hv in [&s_hull, &w_hull, &sd, &wd, &sdd, &wdd] {
                            let (r, _, _) = range_and_extremes(hv);
                            d2 += r * r;
                        }
                        let cbf_margin = 0.5 * d2 * cbf_hessian_bound(obs, gains);
                        let cbf_slack = group.cbf_slack.map_or(0.0, |i| z[i]);
                        for j in 0..per_kind {
                            let (h, hd, hdd) = barrier_rates(
                                s_hull[j], w_hull[j], sd[j], wd[j], sdd[j], wdd[j], obs, t,
                            );
                            out.push(cbf_residual(h, hd, hdd, gains) - cbf_margin + cbf_slack);
                        }
                    }
                }
                GroupSite::Node(i) => {
                    let s = ctx.channel_value(z, group.constraint.s_index, &ctx.phi[i]);
                    let w = ctx.channel_value(z, group.constraint.w_index, &ctx.phi[i]);
                    out.push(barrier_h(s, w, obs, t));
                    if let Some(gains) = &group.constraint.gains {
                        let sd = ctx.channel_value(z, group.constraint.s_index, &self.node_phi1[i]);
                        let wd = ctx.channel_value(z, group.constraint.w_index, &self.node_phi1[i]);
                        let sdd =
                            ctx.channel_value(z, group.constraint.s_index, &self.node_phi2[i]);
                        let wdd =
                            ctx.channel_value(z, group.constraint.w_index, &self.node_phi2[i]);
                        let (h, hd, hdd) = barrier_rates(s, w, sd, wd, sdd, wdd, obs, t);
                        out.push(cbf_residual(h, hd, hdd, gains));
                    }
                }
            }
        }
        DVector::from_vec(out)
    }

    fn jacobian(&self, z: &DVector<f64>) -> SparseRows {
        let ctx = &self.ctx;
        let n = ctx.coeffs_per_channel();
        let mut jac = SparseRows::with_capacity(self.dim, z.len());
        for row in &self.box_rows {
            jac.push_row(row.clone());
        }
        for &idx in &self.slack_nonneg {
            jac.push_row(vec![(idx, 1.0)]);
        }
        let per_kind = self.rows_per_group_kind();
        // Dense row buffer reused across barrier rows.
        let mut buffer = vec![0.0; z.len()];
        for group in &self.groups {
            let obs = &group.constraint.obstacle;
            let t = group.sample_time;
            let (s_obs, w_obs) = obs.center_at(t);
            let a2 = obs.a * obs.a;
            let b2 = obs.b * obs.b;
            let s_idx = group.constraint.s_index;
            let w_idx = group.constraint.w_index;
            match group.site {
                GroupSite::Region(k) => {
                    let hulls = self.hulls.as_ref().unwrap();
                    let map0 = hulls.map(k, 0);
                    let s_hull = self.hull_channel(z, k, s_idx, 0);
                    let w_hull = self.hull_channel(z, k, w_idx, 0);
                    let s_off = ctx.channel_offset(s_idx);
                    let w_off = ctx.channel_offset(w_idx);

                    // Gradient of the margin term, common to all rows of the
                    // group: d/dz [B/2 (range_s^2 + range_w^2)].
                    let bound = obs.hessian_bound();
                    let mut margin_grad: Vec<(usize, f64)> = Vec::new();
                    for (hv, off) in [(&s_hull, s_off), (&w_hull, w_off)] {
                        let (range, hi, lo) = range_and_extremes(hv);
                        let coef = bound * range;
                        if coef != 0.0 {
                            for m in 0..n {
                                margin_grad.push((off + m, coef * (map0[(hi, m)] - map0[(lo, m)])));
                            }
                        }
                    }

                    for j in 0..per_kind {
                        buffer.iter_mut().for_each(|v| *v = 0.0);
                        let gs = 2.0 * (s_hull[j] - s_obs) / a2;
                        let gw = 2.0 * (w_hull[j] - w_obs) / b2;
                        for m in 0..n {
                            buffer[s_off + m] += gs * map0[(j, m)];
                            buffer[w_off + m] += gw * map0[(j, m)];
                        }
                        for &(c, v) in &margin_grad {
                            buffer[c] -= v;
                        }
                        if let Some(slack) = group.h_slack {
                            buffer[slack] += 1.0;
                        }
                        jac.push_row(compress(&buffer));
                    }

                    if let Some(gains) = &group.constraint.gains {
                        let map1 = hulls.map(k, 1);
                        let map2 = hulls.map(k, 2);
                        let sc1 = 2.0 / ctx.t_f;
                        let sc2 = sc1 * sc1;
                        let sd = self.hull_channel(z, k, s_idx, 1);
                        let wd = self.hull_channel(z, k, w_idx, 1);
                        let sdd = self.hull_channel(z, k, s_idx, 2);
                        let wdd = self.hull_channel(z, k, w_idx, 2);

                        let cbf_bound = cbf_hessian_bound(obs, gains);
                        let mut margin_grad: Vec<(usize, f64)> = Vec::new();
                        for (hv, off, map, scale) in [
                            (&s_hull, s_off, map0, 1.0),
                            (&w_hull, w_off, map0, 1.0),
                            (&sd, s_off, map1, sc1),
                            (&wd, w_off, map1, sc1),
                            (&sdd, s_off, map2, sc2),
                            (&wdd, w_off, map2, sc2),
                        ] {
                            let (range, hi, lo) = range_and_extremes(hv);
                            let coef = cbf_bound * range * scale;
                            if coef != 0.0 {
                                for m in 0..n {
                                    margin_grad
                                        .push((off + m, coef * (map[(hi, m)] - map[(lo, m)])));
                                }
                            }
                        }

                        for j in 0..per_kind {
                            buffer.iter_mut().for_each(|v| *v = 0.0);
                            let ds = s_hull[j] - s_obs;
                            let dw = w_hull[j] - w_obs;
                            // Partials of the CBF residual in the six
                            // kinematic quantities.
                            let d_s = (2.0 * sdd[j] + gains.k1 * 2.0 * sd[j] + gains.k2 * 2.0 * ds)
                                / a2;
                            let d_sd = (4.0 * sd[j] + gains.k1 * 2.0 * ds) / a2;
                            let d_sdd = 2.0 * ds / a2;
                            let d_w = (2.0 * wdd[j] + gains.k1 * 2.0 * wd[j] + gains.k2 * 2.0 * dw)
                                / b2;
                            let d_wd = (4.0 * wd[j] + gains.k1 * 2.0 * dw) / b2;
                            let d_wdd = 2.0 * dw / b2;
                            for m in 0..n {
                                buffer[s_off + m] += d_s * map0[(j, m)]
                                    + d_sd * sc1 * map1[(j, m)]
                                    + d_sdd * sc2 * map2[(j, m)];
                                buffer[w_off + m] += d_w * map0[(j, m)]
                                    + d_wd * sc1 * map1[(j, m)]
                                    + d_wdd * sc2 * map2[(j, m)];
                            }
                            for &(c, v) in &margin_grad {
                                buffer[c] -= v;
                            }
                            if let Some(slack) = group.cbf_slack {
                                buffer[slack] += 1.0;
                            }
                            jac.push_row(compress(&buffer));
                        }
                    }
                }
                GroupSite::Node(i) => {
                    let phi = &ctx.phi[i];
                    let s = ctx.channel_value(z, s_idx, phi);
                    let w = ctx.channel_value(z, w_idx, phi);
                    let s_off = ctx.channel_offset(s_idx);
                    let w_off = ctx.channel_offset(w_idx);
                    let gs = 2.0 * (s - s_obs) / a2;
                    let gw = 2.0 * (w - w_obs) / b2;
                    let mut row = Vec::with_capacity(2 * n);
                    for m in 0..n {
                        row.push((s_off + m, gs * phi[m]));
                    }
                    for m in 0..n {
                        row.push((w_off + m, gw * phi[m]));
                    }
                    jac.push_row(row);
                    if let Some(gains) = &group.constraint.gains {
                        let phi1 = &self.node_phi1[i];
                        let phi2 = &self.node_phi2[i];
                        let sd = ctx.channel_value(z, s_idx, phi1);
                        let wd = ctx.channel_value(z, w_idx, phi1);
                        let sdd = ctx.channel_value(z, s_idx, phi2);
                        let wdd = ctx.channel_value(z, w_idx, phi2);
                        let ds = s - s_obs;
                        let dw = w - w_obs;
                        let d_s = (2.0 * sdd + gains.k1 * 2.0 * sd + gains.k2 * 2.0 * ds) / a2;
                        let d_sd = (4.0 * sd + gains.k1 * 2.0 * ds) / a2;
                        let d_sdd = 2.0 * ds / a2;
                        let d_w = (2.0 * wdd + gains.k1 * 2.0 * wd + gains.k2 * 2.0 * dw) / b2;
                        let d_wd = (4.0 * wd + gains.k1 * 2.0 * dw) / b2;
                        let d_wdd = 2.0 * dw / b2;
                        let mut row = Vec::with_capacity(2 * n);
                        for m in 0..n {
                            row.push((
                                s_off + m,
                                d_s * phi[m] + d_sd * phi1[m] + d_sdd * phi2[m],
                            ));
                        }
                        for m in 0..n {
                            row.push((
                                w_off + m,
                                d_w * phi[m] + d_wd * phi1[m] + d_wdd * phi2[m],
                            ));
                        }
                        jac.push_row(row);
                    }
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

fn compress(buffer: &[f64]) -> Vec<(usize, f64)> {
    buffer
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(c, &v)| (c, v))
        .collect()
}

/// Transcribe with regional convex hulls (`regions >= 1` sub-intervals).
pub fn transcribe_resafecol(
    ocp: &OcpSpec,
    degree: usize,
    nodes: usize,
    regions: usize,
) -> Result<NlpProblem> {
    ResafecolTranscriber::new(
        ocp.state_dim(),
        ocp.input_dim(),
        ocp.t_f,
        degree,
        nodes,
        regions,
    )?
    .transcribe(ocp)
}

/// Transcribe with node-only constraints (pseudospectral collocation).
pub fn transcribe_psc(ocp: &OcpSpec, degree: usize, nodes: usize) -> Result<NlpProblem> {
    ResafecolTranscriber::new_nodes_only(
        ocp.state_dim(),
        ocp.input_dim(),
        ocp.t_f,
        degree,
        nodes,
    )?
    .transcribe(ocp)
}
