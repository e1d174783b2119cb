//! Gauss-Newton SQP with full-step (real-time iteration) and
//! merit-backtracking modes.
//!
//! Each iteration linearizes both constraint blocks at the current iterate
//! and solves one convex QP in the step direction; the cost Hessian is
//! exact because every transcription produces an exactly quadratic cost.
//! On QP infeasibility the inequality rows are relaxed once and the solve
//! retried; persistent infeasibility is an error.

use std::time::Instant;

use nalgebra::DVector;

use super::qp::{qp_solve, QpOptions, QpStatus, QpWarmStart};
use crate::error::{Error, Result};
use crate::transcription::NlpProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineSearch {
    /// Always take the full SQP step (real-time iteration flavor).
    FullStep,
    /// Backtrack on an l1 merit function.
    MeritBacktracking,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// SQP iterations per solve; few iterations plus warm starting give the
    /// real-time iteration scheme.
    pub max_sqp_iterations: usize,
    pub qp_tolerance: f64,
    pub qp_max_iterations: usize,
    pub line_search: LineSearch,
    /// Hessian regularization added to the Gauss-Newton Hessian.
    pub regularization: f64,
    pub warm_start: bool,
    pub step_tolerance: f64,
    pub constraint_tolerance: f64,
    /// Deterministic compute budget per solve, in solver work units; stands
    /// in for the real-time cycle deadline in reproducible benchmarks.
    pub work_budget: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_sqp_iterations: 3,
            qp_tolerance: 1e-4,
            qp_max_iterations: 4000,
            line_search: LineSearch::FullStep,
            regularization: 1e-6,
            warm_start: true,
            step_tolerance: 1e-8,
            constraint_tolerance: 1e-6,
            work_budget: None,
        }
    }
}

impl SolveOptions {
    /// Real-time iteration defaults (3 iterations, full steps).
    pub fn real_time() -> Self {
        Self::default()
    }

    /// Solve to convergence; used by the open-loop oracle comparisons.
    pub fn to_convergence() -> Self {
        Self {
            max_sqp_iterations: 60,
            qp_tolerance: 1e-9,
            qp_max_iterations: 200_000,
            line_search: LineSearch::MeritBacktracking,
            step_tolerance: 1e-10,
            constraint_tolerance: 1e-8,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub iterations: usize,
    pub qp_iterations: usize,
    pub wall_time_ms: f64,
    pub max_constraint_violation: f64,
    pub cost: f64,
    pub converged: bool,
    pub budget_exhausted: bool,
    /// Accumulated deterministic work units.
    pub work: f64,
}

fn violation_l1(nlp: &NlpProblem, z: &DVector<f64>) -> f64 {
    let mut total = 0.0;
    let ce = nlp.equality.eval(z);
    for i in 0..ce.len() {
        total += (ce[i] - nlp.equality.lower()[i]).abs();
    }
    let ci = nlp.inequality.eval(z);
    for i in 0..ci.len() {
        total += (nlp.inequality.lower()[i] - ci[i]).max(0.0);
        total += (ci[i] - nlp.inequality.upper()[i]).max(0.0);
    }
    total
}

/// Solve the NLP from `init` (falling back to the problem's warm start or
/// default initial guess).
pub fn sqp_solve(
    nlp: &NlpProblem,
    init: Option<&DVector<f64>>,
    opts: &SolveOptions,
) -> Result<(DVector<f64>, SolveStats)> {
    let start = Instant::now();
    let mut z = match init {
        Some(v) => v.clone(),
        None => match (&nlp.warm_start, opts.warm_start) {
            (Some(w), true) => w.clone(),
            _ => nlp.default_init.clone(),
        },
    };
    nlp.validate_point(&z)?;

    let n = nlp.dim();
    let mut h_reg = nlp.cost.hessian.clone();
    for i in 0..n {
        h_reg[(i, i)] += opts.regularization;
    }

    let mut stats = SolveStats::default();
    let mut qp_warm = QpWarmStart::default();

    for _ in 0..opts.max_sqp_iterations {
        stats.iterations += 1;

        let c_eq = nlp.equality.eval(&z);
        let c_in = nlp.inequality.eval(&z);
        let mut a = nlp.equality.jacobian(&z);
        a.append(nlp.inequality.jacobian(&z));

        let m_eq = c_eq.len();
        let m_in = c_in.len();
        let mut lower = DVector::zeros(m_eq + m_in);
        let mut upper = DVector::zeros(m_eq + m_in);
        for i in 0..m_eq {
            lower[i] = nlp.equality.lower()[i] - c_eq[i];
            upper[i] = lower[i];
        }
        for i in 0..m_in {
            lower[m_eq + i] = nlp.inequality.lower()[i] - c_in[i];
            upper[m_eq + i] = nlp.inequality.upper()[i] - c_in[i];
        }

        let gradient = nlp.cost.gradient(&z);
        let qp_opts = QpOptions {
            eps_abs: opts.qp_tolerance,
            eps_rel: opts.qp_tolerance,
            max_iterations: opts.qp_max_iterations,
            work_budget: opts.work_budget.map(|b| (b - stats.work).max(1.0)),
            ..Default::default()
        };
        let warm = if opts.warm_start { Some(&qp_warm) } else { None };
        let mut sol = qp_solve(&h_reg, &gradient, &a, &lower, &upper, &qp_opts, warm)?;
        stats.work += sol.work;
        stats.qp_iterations += sol.iterations;

        if matches!(
            sol.status,
            QpStatus::PrimalInfeasible | QpStatus::DualInfeasible
        ) {
            // Soften the inequality rows once and retry.
            let viol = nlp.max_violation(&z);
            let relax = 10.0 * (1.0 + viol);
            for i in m_eq..m_eq + m_in {
                if lower[i].is_finite() {
                    lower[i] -= relax;
                }
                if upper[i].is_finite() {
                    upper[i] += relax;
                }
            }
            sol = qp_solve(&h_reg, &gradient, &a, &lower, &upper, &qp_opts, None)?;
            stats.work += sol.work;
            stats.qp_iterations += sol.iterations;
            if matches!(
                sol.status,
                QpStatus::PrimalInfeasible | QpStatus::DualInfeasible
            ) {
                return Err(Error::QpInfeasible(format!(
                    "method {} remained infeasible after relaxing {} inequality rows by {relax:.3e} \
                     (violation {viol:.3e}, iteration {})",
                    nlp.meta.method, m_in, stats.iterations
                )));
            }
        }

        let step = sol.primal.clone();
        let step_norm = step.amax();

        let alpha = match opts.line_search {
            LineSearch::FullStep => 1.0,
            LineSearch::MeritBacktracking => {
                let nu = 10.0 + 2.0 * sol.dual.amax();
                let merit = |point: &DVector<f64>| {
                    nlp.cost.value(point) + nu * violation_l1(nlp, point)
                };
                let base = merit(&z);
                let slope =
                    gradient.dot(&step) - nu * violation_l1(nlp, &z);
                let mut alpha = 1.0;
                for _ in 0..12 {
                    let cand = &z + &step * alpha;
                    if merit(&cand) <= base + 1e-4 * alpha * slope.min(0.0) {
                        break;
                    }
                    alpha *= 0.5;
                }
                alpha
            }
        };
        z += &step * alpha;

        qp_warm.primal = Some(DVector::zeros(n));
        qp_warm.dual = Some(sol.dual);

        let viol = nlp.max_violation(&z);
        if step_norm * alpha < opts.step_tolerance && viol < opts.constraint_tolerance {
            stats.converged = true;
            break;
        }
        if sol.status == QpStatus::BudgetExhausted {
            stats.budget_exhausted = true;
            break;
        }
        if let Some(budget) = opts.work_budget {
            if stats.work >= budget {
                stats.budget_exhausted = true;
                break;
            }
        }
    }

    stats.max_constraint_violation = nlp.max_violation(&z);
    stats.cost = nlp.cost.value(&z);
    if !stats.converged {
        stats.converged = stats.max_constraint_violation < opts.constraint_tolerance
            && stats.iterations < opts.max_sqp_iterations;
    }
    stats.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((z, stats))
}
