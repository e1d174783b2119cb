//! Convex QP solver: operator-splitting ADMM with over-relaxation and
//! residual-balanced step-size adaptation.
//!
//! Solves
//!
//! ```text
//! min  1/2 x^T H x + g^T x    s.t.  lower <= A x <= upper
//! ```
//!
//! with `H` symmetric positive semidefinite. Equality rows are expressed as
//! `lower == upper` and internally get a stiffer splitting weight. The
//! x-update solves the regularized normal equations
//! `(H + sigma I + A^T R A) x = rhs` through a Cholesky factorization that
//! switches to a banded algorithm when the problem has the block-banded
//! structure of multiple-shooting Jacobians.

use nalgebra::{DMatrix, DVector};

use super::sparse::SparseRows;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    PrimalInfeasible,
    DualInfeasible,
    /// The deterministic work budget ran out; the best iterate is returned.
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct QpOptions {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iterations: usize,
    /// Initial splitting step size.
    pub rho: f64,
    /// Proximal regularization of the x-update.
    pub sigma: f64,
    /// Over-relaxation factor.
    pub alpha: f64,
    pub adaptive_rho: bool,
    /// Optional cap on accumulated work units (see [`QpSolution::work`]).
    pub work_budget: Option<f64>,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            eps_abs: 1e-4,
            eps_rel: 1e-4,
            max_iterations: 4000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            work_budget: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub primal: DVector<f64>,
    /// Row multipliers with the convention `H x + g = A^T dual`; positive
    /// entries correspond to active lower bounds.
    pub dual: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Accumulated work units: an operation-count proxy for wall time that
    /// is deterministic across machines.
    pub work: f64,
}

/// Warm-start state carried between related QP solves.
#[derive(Debug, Clone, Default)]
pub struct QpWarmStart {
    pub primal: Option<DVector<f64>>,
    pub dual: Option<DVector<f64>>,
}

enum Factor {
    Dense(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Banded { l: DMatrix<f64>, band: usize },
}

impl Factor {
    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            Factor::Dense(chol) => chol.solve(rhs),
            Factor::Banded { l, band } => {
                let n = l.nrows();
                let mut x = rhs.clone();
                for i in 0..n {
                    let lo = i.saturating_sub(*band);
                    let mut acc = x[i];
                    for k in lo..i {
                        acc -= l[(i, k)] * x[k];
                    }
                    x[i] = acc / l[(i, i)];
                }
                for i in (0..n).rev() {
                    let hi = (i + band + 1).min(n);
                    let mut acc = x[i];
                    for k in i + 1..hi {
                        acc -= l[(k, i)] * x[k];
                    }
                    x[i] = acc / l[(i, i)];
                }
                x
            }
        }
    }

    /// Approximate flop count of one solve.
    fn solve_work(&self) -> f64 {
        match self {
            Factor::Dense(chol) => {
                let n = chol.l_dirty().nrows() as f64;
                2.0 * n * n
            }
            Factor::Banded { l, band } => 4.0 * l.nrows() as f64 * (*band as f64 + 1.0),
        }
    }
}

fn banded_cholesky(k: &DMatrix<f64>, band: usize) -> Option<DMatrix<f64>> {
    let n = k.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let lo = j.saturating_sub(band);
        for i in j..(j + band + 1).min(n) {
            let mut acc = k[(i, j)];
            let start = lo.max(i.saturating_sub(band));
            for p in start..j {
                acc -= l[(i, p)] * l[(j, p)];
            }
            if i == j {
                if acc <= 0.0 {
                    return None;
                }
                l[(j, j)] = acc.sqrt();
            } else {
                l[(i, j)] = acc / l[(j, j)];
            }
        }
    }
    Some(l)
}

fn factorize(
    h: &DMatrix<f64>,
    a: &SparseRows,
    sigma: f64,
    rho_rows: &DVector<f64>,
    work: &mut f64,
) -> Result<Factor> {
    let n = h.nrows();
    let mut k = h.clone();
    for i in 0..n {
        k[(i, i)] += sigma;
    }
    a.add_weighted_gram(rho_rows, &mut k);
    *work += a.nnz() as f64 * 4.0;

    // Bandwidth of K: the Jacobian rows plus any dense cost coupling.
    let mut band = a.bandwidth();
    for i in 0..n {
        for j in 0..i {
            if h[(i, j)] != 0.0 {
                band = band.max(i - j);
            }
        }
    }
    if 3 * band < n {
        if let Some(l) = banded_cholesky(&k, band) {
            *work += n as f64 * (band as f64 + 1.0).powi(2);
            return Ok(Factor::Banded { l, band });
        }
    }
    *work += (n as f64).powi(3) / 3.0;
    let mut shift = 0.0;
    for attempt in 0..6 {
        let mut kk = k.clone();
        if shift > 0.0 {
            for i in 0..n {
                kk[(i, i)] += shift;
            }
        }
        if let Some(chol) = kk.cholesky() {
            return Ok(Factor::Dense(chol));
        }
        shift = if attempt == 0 { 1e-8 } else { shift * 100.0 };
    }
    Err(Error::SolverFailure(
        "normal-equation matrix is not positive definite".into(),
    ))
}

/// Solve the box-constrained QP. `warm` optionally carries the primal/dual
/// pair of a related previous solve.
pub fn qp_solve(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &SparseRows,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    opts: &QpOptions,
    warm: Option<&QpWarmStart>,
) -> Result<QpSolution> {
    let n = h.nrows();
    let m = a.nrows();
    if h.ncols() != n || g.len() != n || a.ncols() != n || lower.len() != m || upper.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "QP dimensions disagree: H {}x{}, g {}, A {}x{}, bounds {}/{}",
            h.nrows(),
            h.ncols(),
            g.len(),
            a.nrows(),
            a.ncols(),
            lower.len(),
            upper.len()
        )));
    }
    for i in 0..m {
        if lower[i] > upper[i] {
            return Err(Error::InvalidArgument(format!(
                "row {i}: lower bound {} above upper {}",
                lower[i], upper[i]
            )));
        }
    }

    let mut work = 0.0;
    let mut rho_scale = 1.0f64;
    let row_rho = |scale: f64| -> DVector<f64> {
        DVector::from_fn(m, |i, _| {
            if upper[i] - lower[i] < 1e-12 {
                // Stiff splitting weight on equality rows.
                (opts.rho * scale * 1e3).min(1e6)
            } else {
                opts.rho * scale
            }
        })
    };

    let mut rho = row_rho(rho_scale);
    let mut factor = factorize(h, a, opts.sigma, &rho, &mut work)?;

    let mut x = warm
        .and_then(|w| w.primal.clone())
        .filter(|v| v.len() == n)
        .unwrap_or_else(|| DVector::zeros(n));
    let mut y = warm
        .and_then(|w| w.dual.as_ref().map(|d| -d))
        .filter(|v| v.len() == m)
        .unwrap_or_else(|| DVector::zeros(m));
    let mut z = a.mul_vec(&x);
    for i in 0..m {
        z[i] = z[i].clamp(lower[i], upper[i]);
    }

    let mut status = QpStatus::MaxIterations;
    let mut iterations = 0;
    let mut y_prev_check = y.clone();
    let mut x_prev_check = x.clone();

    let iter_work = |factor: &Factor| 4.0 * a.nnz() as f64 + factor.solve_work() + 8.0 * (n + m) as f64;

    for iter in 0..opts.max_iterations {
        iterations = iter + 1;

        // x-update via the normal equations.
        let mut rhs = &x * opts.sigma - g;
        let mut zy = DVector::zeros(m);
        for i in 0..m {
            zy[i] = rho[i] * z[i] - y[i];
        }
        rhs += a.tr_mul_vec(&zy);
        let x_tilde = factor.solve(&rhs);
        let ax_tilde = a.mul_vec(&x_tilde);

        // Over-relaxation, projection, dual update.
        x = &x_tilde * opts.alpha + &x * (1.0 - opts.alpha);
        let mut z_new = DVector::zeros(m);
        for i in 0..m {
            let z_relaxed = opts.alpha * ax_tilde[i] + (1.0 - opts.alpha) * z[i];
            let cand = z_relaxed + y[i] / rho[i];
            z_new[i] = cand.clamp(lower[i], upper[i]);
            y[i] += rho[i] * (z_relaxed - z_new[i]);
        }
        z = z_new;

        work += iter_work(&factor);
        if let Some(budget) = opts.work_budget {
            if work >= budget {
                status = QpStatus::BudgetExhausted;
                break;
            }
        }

        if iter % 10 == 9 || iter == opts.max_iterations - 1 {
            let ax = a.mul_vec(&x);
            let r_pri = (0..m).fold(0.0f64, |mx, i| mx.max((ax[i] - z[i]).abs()));
            let hx = h * &x;
            let aty = a.tr_mul_vec(&y);
            let r_dua = (0..n).fold(0.0f64, |mx, i| mx.max((hx[i] + g[i] + aty[i]).abs()));
            let eps_pri = opts.eps_abs + opts.eps_rel * ax.amax().max(z.amax());
            let eps_dua =
                opts.eps_abs + opts.eps_rel * hx.amax().max(aty.amax()).max(g.amax());
            work += 4.0 * (a.nnz() + n * n) as f64;
            if r_pri <= eps_pri && r_dua <= eps_dua {
                status = QpStatus::Solved;
                break;
            }

            // Infeasibility certificates from the iterate differences.
            if iter % 50 == 49 {
                let dy = &y - &y_prev_check;
                let dy_norm = dy.amax();
                if dy_norm > 1e-10 {
                    let v = &dy / dy_norm;
                    let atv = a.tr_mul_vec(&v);
                    let mut support = 0.0;
                    let mut bounded = true;
                    for i in 0..m {
                        if v[i] > 1e-9 {
                            if upper[i].is_infinite() {
                                bounded = false;
                                break;
                            }
                            support += upper[i] * v[i];
                        } else if v[i] < -1e-9 {
                            if lower[i].is_infinite() {
                                bounded = false;
                                break;
                            }
                            support += lower[i] * v[i];
                        }
                    }
                    if bounded && atv.amax() < 1e-8 && support < -1e-8 {
                        status = QpStatus::PrimalInfeasible;
                        break;
                    }
                }
                let dx = &x - &x_prev_check;
                let dx_norm = dx.amax();
                if dx_norm > 1e-10 {
                    let v = &dx / dx_norm;
                    let hv = h * &v;
                    let av = a.mul_vec(&v);
                    let mut directionally_ok = true;
                    for i in 0..m {
                        if av[i] > 1e-9 && upper[i].is_finite() {
                            directionally_ok = false;
                            break;
                        }
                        if av[i] < -1e-9 && lower[i].is_finite() {
                            directionally_ok = false;
                            break;
                        }
                    }
                    if directionally_ok && hv.amax() < 1e-8 && g.dot(&v) < -1e-8 {
                        status = QpStatus::DualInfeasible;
                        break;
                    }
                }
                y_prev_check = y.clone();
                x_prev_check = x.clone();

                // Residual balancing.
                if opts.adaptive_rho && r_dua > 1e-30 {
                    let ratio = (r_pri / eps_pri.max(1e-30)) / (r_dua / eps_dua.max(1e-30));
                    let scale = ratio.sqrt().clamp(1e-3, 1e3);
                    if !(0.2..=5.0).contains(&scale) {
                        rho_scale = (rho_scale * scale).clamp(1e-6, 1e6);
                        rho = row_rho(rho_scale);
                        factor = factorize(h, a, opts.sigma, &rho, &mut work)?;
                    }
                }
            }
        }
    }

    Ok(QpSolution {
        dual: -y,
        primal: x,
        status,
        iterations,
        work,
    })
}
