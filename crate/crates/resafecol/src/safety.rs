//! Ellipsoidal collision barriers and exponential CBF constraints over
//! spline trajectories.
//!
//! Obstacles are enlarged ellipses in the Frenet frame, centered at
//! `(s_obs(t), w_obs(t))` with semi-axes `a` (along the path) and `b`
//! (lateral). The barrier
//!
//! ```text
//! h(s, w) = (s - s_obs)^2 / a^2 + (w - w_obs)^2 / b^2 - 1 >= 0
//! ```
//!
//! keeps the vehicle outside. The relative degree of `h` along the vehicle
//! model is two, so forward invariance is enforced through the exponential
//! CBF condition `h_ddot + k1 h_dot + k2 h >= 0`. Because every trajectory
//! channel is a spline, the rates `s_dot, w_dot, s_ddot, w_ddot` come from
//! differentiating the spline itself; the dynamics never enter.
//!
//! [`hull_constraint_rows`] evaluates both conditions on the entries of the
//! regional convex hulls, one row per hull entry, together with the
//! second-order enlargement margins that the optimizer treats as penalized
//! slacks.

use nalgebra::Matrix3;

use crate::basis::SplineCoefficients;
use crate::envelope::HullMatrixSet;
use crate::error::{Error, Result};

pub const DEFAULT_DETECTION_RANGE: f64 = 30.0;

/// An elliptic obstacle with a piecewise-linear (constant-velocity) center
/// trajectory over the prediction horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleEllipse {
    /// Center at horizon time zero.
    pub s0: f64,
    pub w0: f64,
    /// Center velocity in the Frenet frame.
    pub v_s: f64,
    pub v_w: f64,
    /// Semi-axis along the path [m].
    pub a: f64,
    /// Lateral semi-axis [m].
    pub b: f64,
    /// Only obstacles closer than this enter the optimization [m].
    pub detection_range: f64,
}

impl ObstacleEllipse {
    pub fn new(s0: f64, w0: f64, v_s: f64, v_w: f64, a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0) || !(b > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ellipse semi-axes must be positive, got a={a}, b={b}"
            )));
        }
        Ok(Self {
            s0,
            w0,
            v_s,
            v_w,
            a,
            b,
            detection_range: DEFAULT_DETECTION_RANGE,
        })
    }

    pub fn static_at(s0: f64, w0: f64, a: f64, b: f64) -> Result<Self> {
        Self::new(s0, w0, 0.0, 0.0, a, b)
    }

    /// Center position `t` seconds into the horizon.
    pub fn center_at(&self, t: f64) -> (f64, f64) {
        (self.s0 + self.v_s * t, self.w0 + self.v_w * t)
    }

    /// Largest Hessian eigenvalue of the barrier: `max{2/a^2, 2/b^2}`.
    pub fn hessian_bound(&self) -> f64 {
        (2.0 / (self.a * self.a)).max(2.0 / (self.b * self.b))
    }
}

/// Gains of the exponential CBF condition `h_ddot + k1 h_dot + k2 h >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbfGains {
    pub k1: f64,
    pub k2: f64,
}

impl Default for CbfGains {
    fn default() -> Self {
        Self { k1: 1.6, k2: 1.1 }
    }
}

impl CbfGains {
    pub fn new(k1: f64, k2: f64) -> Result<Self> {
        if !(k1 > 0.0) || !(k2 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "CBF gains must be positive, got k1={k1}, k2={k2}"
            )));
        }
        Ok(Self { k1, k2 })
    }
}

/// Barrier value at `(s, w)` against the obstacle position at horizon time
/// `t`.
pub fn barrier_h(s: f64, w: f64, obs: &ObstacleEllipse, t: f64) -> f64 {
    let (s_obs, w_obs) = obs.center_at(t);
    let ds = (s - s_obs) / obs.a;
    let dw = (w - w_obs) / obs.b;
    ds * ds + dw * dw - 1.0
}

/// Barrier value and its first two time derivatives along a trajectory with
/// the given position rates. The obstacle center is held at its time-`t`
/// position for the derivatives.
#[allow(clippy::too_many_arguments)]
pub fn barrier_rates(
    s: f64,
    w: f64,
    s_dot: f64,
    w_dot: f64,
    s_ddot: f64,
    w_ddot: f64,
    obs: &ObstacleEllipse,
    t: f64,
) -> (f64, f64, f64) {
    let (s_obs, w_obs) = obs.center_at(t);
    let a2 = obs.a * obs.a;
    let b2 = obs.b * obs.b;
    let ds = s - s_obs;
    let dw = w - w_obs;
    let h = ds * ds / a2 + dw * dw / b2 - 1.0;
    let h_dot = 2.0 * ds * s_dot / a2 + 2.0 * dw * w_dot / b2;
    let h_ddot = (2.0 * ds * s_ddot + 2.0 * s_dot * s_dot) / a2
        + (2.0 * dw * w_ddot + 2.0 * w_dot * w_dot) / b2;
    (h, h_dot, h_ddot)
}

/// The exponential CBF residual `h_ddot + k1 h_dot + k2 h`.
pub fn cbf_residual(h: f64, h_dot: f64, h_ddot: f64, gains: &CbfGains) -> f64 {
    h_ddot + gains.k1 * h_dot + gains.k2 * h
}

/// Largest Hessian eigenvalue of the CBF residual viewed as a quadratic in
/// `(s, w, s_dot, w_dot, s_ddot, w_ddot)`. The Hessian is block diagonal
/// with one 3x3 block per position channel, scaled by `2/a^2` and `2/b^2`.
pub fn cbf_hessian_bound(obs: &ObstacleEllipse, gains: &CbfGains) -> f64 {
    let block = Matrix3::new(
        gains.k2, gains.k1, 1.0, //
        gains.k1, 2.0, 0.0, //
        1.0, 0.0, 0.0,
    );
    let lam = block
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, &e| m.max(e.abs()));
    obs.hessian_bound() * lam
}

/// Hull-evaluated barrier and CBF rows for one region, plus their
/// second-order enlargement margins.
#[derive(Debug, Clone)]
pub struct HullConstraintRows {
    /// `h` at each pair of hull entries of `(s, w)`; all must stay at or
    /// above `h_margin - slack` for certified continuous-time safety.
    pub h_rows: Vec<f64>,
    /// CBF residual at each hull-entry tuple; empty when no gains given.
    pub cbf_rows: Vec<f64>,
    /// Enlargement covering the gap between hull samples and the true
    /// extremum of `h` over the region.
    pub h_margin: f64,
    pub cbf_margin: f64,
    /// Obstacle center sampling time for this region [s].
    pub sample_time: f64,
}

impl HullConstraintRows {
    /// Certified lower bound of `h` over the region implied by the rows.
    pub fn certified_h_min(&self) -> f64 {
        self.h_rows.iter().fold(f64::INFINITY, |m, &v| m.min(v)) - self.h_margin
    }
}

fn range_sq_sum(hulls: &[&[f64]]) -> f64 {
    hulls
        .iter()
        .map(|h| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &v in h.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let range = hi - lo;
            range * range
        })
        .sum()
}

/// Evaluate barrier and CBF constraint rows on the regional hull entries of
/// the `(s, w)` channels and their derivative hulls.
///
/// Each hull entry is a certified candidate extremum of the spline, so the
/// conditions are imposed entry-wise. Because the hull entries of different
/// channels pair by index, the true trajectory stays within their planar
/// convex hull; the returned margins bound the second-order error, using
/// the hull diameter `D^2 = sum_c range_c^2` in place of the sorted-gap
/// distance so that the bound also holds for the paired multichannel rows:
/// `min_t g >= min_rows g - (D^2/2) max|eig Hess g|`.
pub fn hull_constraint_rows(
    obs: &ObstacleEllipse,
    gains: Option<&CbfGains>,
    hulls: &HullMatrixSet,
    coeffs: &SplineCoefficients,
    region: usize,
    s_channel: usize,
    w_channel: usize,
) -> Result<HullConstraintRows> {
    let (tau_lo, tau_hi) = hulls.region_span(region);
    // Obstacle sampled at the region midpoint of the horizon.
    let sample_time = (0.5 * (tau_lo + tau_hi) + 1.0) / 2.0 * coeffs.t_f;

    let s_hull = hulls.hull_values(coeffs, region, s_channel, 0)?;
    let w_hull = hulls.hull_values(coeffs, region, w_channel, 0)?;
    let h_rows: Vec<f64> = s_hull
        .iter()
        .zip(w_hull.iter())
        .map(|(&s, &w)| barrier_h(s, w, obs, sample_time))
        .collect();
    let h_margin =
        0.5 * range_sq_sum(&[s_hull.as_slice(), w_hull.as_slice()]) * obs.hessian_bound();

    let (cbf_rows, cbf_margin) = if let Some(gains) = gains {
        let sd = hulls.hull_values(coeffs, region, s_channel, 1)?;
        let wd = hulls.hull_values(coeffs, region, w_channel, 1)?;
        let sdd = hulls.hull_values(coeffs, region, s_channel, 2)?;
        let wdd = hulls.hull_values(coeffs, region, w_channel, 2)?;
        let rows: Vec<f64> = (0..s_hull.len())
            .map(|j| {
                let (h, h_dot, h_ddot) = barrier_rates(
                    s_hull[j],
                    w_hull[j],
                    sd[j],
                    wd[j],
                    sdd[j],
                    wdd[j],
                    obs,
                    sample_time,
                );
                cbf_residual(h, h_dot, h_ddot, gains)
            })
            .collect();
        let d2 = range_sq_sum(&[
            s_hull.as_slice(),
            w_hull.as_slice(),
            sd.as_slice(),
            wd.as_slice(),
            sdd.as_slice(),
            wdd.as_slice(),
        ]);
        (rows, 0.5 * d2 * cbf_hessian_bound(obs, gains))
    } else {
        (Vec::new(), 0.0)
    };

    Ok(HullConstraintRows {
        h_rows,
        cbf_rows,
        h_margin,
        cbf_margin,
        sample_time,
    })
}
