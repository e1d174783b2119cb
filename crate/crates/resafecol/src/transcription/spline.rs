//! Shared machinery for the spline-based transcriptions: basis and grid
//! caches, channel layout, and the warm-start time shift.

use nalgebra::{DMatrix, DVector};

use crate::basis::{legendre_coefficients, CollocationGrid, LegendreBasis, SplineCoefficients};
use crate::envelope::time_transform_matrix;
use crate::error::{Error, Result};

/// Precomputed evaluation data for one spline parameterization: degree,
/// collocation grid, and basis value vectors at the nodes. One instance is
/// shared by the cost, the defect block, and the inequality block.
#[derive(Debug, Clone)]
pub struct SplineContext {
    pub basis: LegendreBasis,
    pub grid: CollocationGrid,
    pub nx: usize,
    pub nu: usize,
    pub t_f: f64,
    /// Basis values `L v(tau_i)` per node.
    pub phi: Vec<DVector<f64>>,
    /// Basis derivative values `L v_dot(tau_i)` per node.
    pub phi_dot: Vec<DVector<f64>>,
    pub phi_start: DVector<f64>,
    pub phi_end: DVector<f64>,
}

impl SplineContext {
    pub fn new(nx: usize, nu: usize, t_f: f64, degree: usize, nodes: usize) -> Result<Self> {
        if nodes < degree + 1 {
            return Err(Error::InvalidArgument(format!(
                "need at least {} collocation nodes for degree {degree}, got {nodes}",
                degree + 1
            )));
        }
        if !(t_f > 0.0) {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        let basis = legendre_coefficients(degree)?;
        let grid = CollocationGrid::new(nodes)?;
        let phi: Vec<_> = grid.nodes.iter().map(|&tau| basis.eval(tau)).collect();
        let phi_dot: Vec<_> = grid
            .nodes
            .iter()
            .map(|&tau| basis.eval_deriv(tau, 1))
            .collect();
        let phi_start = basis.eval(-1.0);
        let phi_end = basis.eval(1.0);
        Ok(Self {
            basis,
            grid,
            nx,
            nu,
            t_f,
            phi,
            phi_dot,
            phi_start,
            phi_end,
        })
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn coeffs_per_channel(&self) -> usize {
        self.degree() + 1
    }

    pub fn channels(&self) -> usize {
        self.nx + self.nu
    }

    /// Dimension of the spline coefficients (without slacks).
    pub fn primal_dim(&self) -> usize {
        self.channels() * self.coeffs_per_channel()
    }

    /// Offset of channel `c` (states first, then inputs) in the decision
    /// vector.
    pub fn channel_offset(&self, c: usize) -> usize {
        c * self.coeffs_per_channel()
    }

    /// View the leading spline part of a decision vector as a coefficient
    /// matrix with one column per channel.
    pub fn coefficients(&self, z: &DVector<f64>) -> SplineCoefficients {
        let n = self.coeffs_per_channel();
        let alpha = DMatrix::from_fn(n, self.channels(), |row, c| z[self.channel_offset(c) + row]);
        SplineCoefficients {
            alpha,
            t_f: self.t_f,
        }
    }

    /// Value of channel `c` at a precomputed basis vector.
    pub fn channel_value(&self, z: &DVector<f64>, c: usize, basis_vals: &DVector<f64>) -> f64 {
        let off = self.channel_offset(c);
        let n = self.coeffs_per_channel();
        (0..n).map(|k| z[off + k] * basis_vals[k]).sum()
    }

    /// State vector at node `i`.
    pub fn state_at_node(&self, z: &DVector<f64>, i: usize) -> DVector<f64> {
        DVector::from_fn(self.nx, |c, _| self.channel_value(z, c, &self.phi[i]))
    }

    /// Input vector at node `i`.
    pub fn input_at_node(&self, z: &DVector<f64>, i: usize) -> DVector<f64> {
        DVector::from_fn(self.nu, |c, _| {
            self.channel_value(z, c + self.nx, &self.phi[i])
        })
    }

    /// State at arbitrary normalized time.
    pub fn state_at(&self, z: &DVector<f64>, tau: f64) -> DVector<f64> {
        let basis_vals = self.basis.eval(tau);
        DVector::from_fn(self.nx, |c, _| self.channel_value(z, c, &basis_vals))
    }

    /// Input at arbitrary normalized time.
    pub fn input_at(&self, z: &DVector<f64>, tau: f64) -> DVector<f64> {
        let basis_vals = self.basis.eval(tau);
        DVector::from_fn(self.nu, |c, _| self.channel_value(z, c + self.nx, &basis_vals))
    }

    /// Per-channel coefficient map realizing a time shift by `dt` seconds:
    /// the shifted spline satisfies `x'(tau) = x(tau + 2 dt / t_f)` where
    /// both sides use the same basis. Used for warm starting the next NMPC
    /// cycle.
    pub fn shift_matrix(&self, dt: f64) -> Result<DMatrix<f64>> {
        let c = 2.0 * dt / self.t_f;
        let degree = self.degree();
        let transform = time_transform_matrix(c, c + 1.0, degree)?;
        let l_t = self.basis.coeff_matrix().transpose();
        let inv = l_t
            .clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::SolverFailure("basis matrix not invertible".into()))?;
        Ok(inv * transform.transpose() * l_t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::eval_spline;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;

    #[test]
    fn shift_matrix_shifts_the_spline() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let ctx = SplineContext::new(1, 1, 2.0, 5, 6).unwrap();
        let shift_dt = 0.25;
        let shift = ctx.shift_matrix(shift_dt).unwrap();
        let alpha = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
        let shifted = &shift * &alpha;
        let mk = |a: &DVector<f64>| SplineCoefficients {
            alpha: DMatrix::from_column_slice(6, 1, a.as_slice()),
            t_f: ctx.t_f,
        };
        let c = 2.0 * shift_dt / ctx.t_f;
        for tau in [-1.0, -0.5, 0.0, 0.6] {
            let original = eval_spline(&mk(&alpha), &ctx.basis, tau + c, 0).unwrap()[0];
            let moved = eval_spline(&mk(&shifted), &ctx.basis, tau, 0).unwrap()[0];
            assert_abs_diff_eq!(original, moved, epsilon = 1e-10);
        }
    }

    #[test]
    fn node_values_match_eval() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let ctx = SplineContext::new(2, 1, 3.0, 4, 6).unwrap();
        let z = DVector::from_fn(ctx.primal_dim(), |_, _| rng.gen_range(-1.0..1.0));
        let coeffs = ctx.coefficients(&z);
        for i in 0..ctx.grid.len() {
            let x = ctx.state_at_node(&z, i);
            let full = eval_spline(&coeffs, &ctx.basis, ctx.grid.nodes[i], 0).unwrap();
            for c in 0..2 {
                assert_abs_diff_eq!(x[c], full[c], epsilon = 1e-12);
            }
            let u = ctx.input_at_node(&z, i);
            assert_abs_diff_eq!(u[0], full[2], epsilon = 1e-12);
        }
    }
}
