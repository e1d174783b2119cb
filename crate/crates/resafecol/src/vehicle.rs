//! Single-track vehicle dynamics in the curvilinear (Frenet) frame.
//!
//! The 8-dimensional state is `[v_x, v_y, r, s, w, theta, delta, t_r]`:
//! body-frame velocities and yaw rate, arc-length progress, lateral and
//! heading deviation from the path, steering angle and normalized traction.
//! The model is input-rate augmented: the control vector is
//! `u = [dt_r/dt, ddelta/dt]` and the last two state channels integrate it.
//!
//! Three right-hand sides are provided: the dynamic single-track model with
//! linear tire forces, a kinematic bicycle that stays well-behaved at zero
//! speed, and their speed-blended fusion used by both controller and plant.
//! All have hand-coded Jacobians, verified against finite differences in the
//! tests.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 8;
pub const INPUT_DIM: usize = 2;

/// State channel indices.
pub mod idx {
    pub const VX: usize = 0;
    pub const VY: usize = 1;
    pub const R: usize = 2;
    pub const S: usize = 3;
    pub const W: usize = 4;
    pub const THETA: usize = 5;
    pub const DELTA: usize = 6;
    pub const TR: usize = 7;
}

/// Speed below which the traction-resistance sign is smoothed.
const RES_SMOOTHING_SPEED: f64 = 0.5;
/// Lower clamp for the curvilinear denominator used inside optimizer
/// linearizations; the public right-hand sides reject such states instead.
const DENOM_GUARD: f64 = 0.05;

/// Parameters of the single-track model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    /// Vehicle mass [kg].
    pub mass: f64,
    /// Yaw inertia [kg m^2].
    pub inertia_z: f64,
    /// Distance from center of gravity to the front axle [m].
    pub l_f: f64,
    /// Distance from center of gravity to the rear axle [m].
    pub l_r: f64,
    /// Front cornering stiffness [N/rad].
    pub c_f: f64,
    /// Rear cornering stiffness [N/rad].
    pub c_r: f64,
    /// Maximum drive/brake force [N]; longitudinal force is `t_r * f_max`.
    pub f_max: f64,
    /// Constant resistance term [N].
    pub c0: f64,
    /// Quadratic resistance coefficient [N s^2/m^2].
    pub c2: f64,
    /// Blend window: pure kinematic below, pure dynamic above [m/s].
    pub v_blend_lo: f64,
    pub v_blend_hi: f64,
    /// Steering limit [rad].
    pub delta_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        // A light electric two-seater; all entries configurable.
        Self {
            mass: 700.0,
            inertia_z: 750.0,
            l_f: 1.05,
            l_r: 1.25,
            c_f: 60_000.0,
            c_r: 60_000.0,
            f_max: 4_000.0,
            c0: 80.0,
            c2: 0.45,
            v_blend_lo: 2.0,
            v_blend_hi: 5.0,
            delta_max: 0.5,
        }
    }
}

impl VehicleParams {
    pub fn wheelbase(&self) -> f64 {
        self.l_f + self.l_r
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.mass,
            self.inertia_z,
            self.l_f,
            self.l_r,
            self.c_f,
            self.c_r,
            self.f_max,
            self.delta_max,
        ];
        if positive.iter().any(|&p| !(p > 0.0)) || self.c0 < 0.0 || self.c2 < 0.0 {
            return Err(Error::InvalidArgument(
                "vehicle parameters must be positive".into(),
            ));
        }
        if !(self.v_blend_hi > self.v_blend_lo) {
            return Err(Error::InvalidArgument(
                "blend window must have positive width".into(),
            ));
        }
        Ok(())
    }
}

/// Frenet-frame state of the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CurvilinearState {
    pub v_x: f64,
    pub v_y: f64,
    pub r: f64,
    pub s: f64,
    pub w: f64,
    pub theta: f64,
    pub delta: f64,
    pub t_r: f64,
}

impl CurvilinearState {
    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_row_slice(&[
            self.v_x, self.v_y, self.r, self.s, self.w, self.theta, self.delta, self.t_r,
        ])
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            v_x: x[idx::VX],
            v_y: x[idx::VY],
            r: x[idx::R],
            s: x[idx::S],
            w: x[idx::W],
            theta: x[idx::THETA],
            delta: x[idx::DELTA],
            t_r: x[idx::TR],
        }
    }

    /// Check the state invariants against the parameters and path.
    pub fn validate(&self, params: &VehicleParams, path: &PathModel) -> Result<()> {
        if self.t_r.abs() > 1.0 + 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "normalized traction {} outside [-1, 1]",
                self.t_r
            )));
        }
        if self.delta.abs() > params.delta_max + 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "steering angle {} exceeds limit {}",
                self.delta, params.delta_max
            )));
        }
        let denom = 1.0 - path.curvature(self.s) * self.w;
        if denom <= 0.0 {
            return Err(Error::CurvilinearSingularity {
                value: denom,
                s: self.s,
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Path model
// ---------------------------------------------------------------------------

/// Arc-length-parameterized centerline with piecewise-linear curvature and
/// lateral corridor, plus a sampled Cartesian table for projection.
#[derive(Debug, Clone)]
pub struct PathModel {
    breaks: Vec<f64>,
    kappa: Vec<f64>,
    w_left: Vec<f64>,
    w_right: Vec<f64>,
    /// Heading at the breakpoints (exact integral of the curvature).
    psi_breaks: Vec<f64>,
    /// Dense Cartesian samples: arc length, x, y.
    table_step: f64,
    table: Vec<(f64, f64, f64)>,
}

impl PathModel {
    /// Build a path from curvature breakpoints. `w_left` and `w_right` are
    /// the corridor half-widths (both positive) on each side.
    pub fn new(
        breaks: Vec<f64>,
        kappa: Vec<f64>,
        w_left: Vec<f64>,
        w_right: Vec<f64>,
    ) -> Result<Self> {
        if breaks.len() < 2
            || breaks.len() != kappa.len()
            || breaks.len() != w_left.len()
            || breaks.len() != w_right.len()
        {
            return Err(Error::InvalidArgument(
                "path arrays must share a length of at least 2".into(),
            ));
        }
        for w in breaks.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidArgument(
                    "path breakpoints must be strictly increasing".into(),
                ));
            }
        }
        for i in 0..breaks.len() {
            if !(w_left[i] > 0.0) || !(w_right[i] > 0.0) {
                return Err(Error::InvalidArgument(
                    "corridor half-widths must be positive".into(),
                ));
            }
            let reach = w_left[i].max(w_right[i]);
            if kappa[i].abs() * reach >= 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "corridor reaches the curvature center at s = {} (|kappa| w = {})",
                    breaks[i],
                    kappa[i].abs() * reach
                )));
            }
        }
        // Exact heading at the breakpoints: curvature is piecewise linear.
        let mut psi_breaks = vec![0.0; breaks.len()];
        for i in 1..breaks.len() {
            let ds = breaks[i] - breaks[i - 1];
            psi_breaks[i] = psi_breaks[i - 1] + 0.5 * (kappa[i] + kappa[i - 1]) * ds;
        }
        let mut path = Self {
            breaks,
            kappa,
            w_left,
            w_right,
            psi_breaks,
            table_step: 0.25,
            table: Vec::new(),
        };
        path.build_table();
        Ok(path)
    }

    /// A straight corridor of the given length and half-width.
    pub fn straight(length: f64, half_width: f64) -> Result<Self> {
        Self::new(
            vec![0.0, length],
            vec![0.0, 0.0],
            vec![half_width, half_width],
            vec![half_width, half_width],
        )
    }

    fn build_table(&mut self) {
        let length = self.total_length();
        let steps = (length / self.table_step).ceil() as usize;
        let ds = length / steps as f64;
        self.table_step = ds;
        let mut table = Vec::with_capacity(steps + 1);
        let (mut x, mut y) = (0.0, 0.0);
        table.push((self.breaks[0], x, y));
        for i in 0..steps {
            let s0 = self.breaks[0] + i as f64 * ds;
            // Simpson on the exact heading.
            let p0 = self.heading(s0);
            let pm = self.heading(s0 + 0.5 * ds);
            let p1 = self.heading(s0 + ds);
            x += ds / 6.0 * (p0.cos() + 4.0 * pm.cos() + p1.cos());
            y += ds / 6.0 * (p0.sin() + 4.0 * pm.sin() + p1.sin());
            table.push((s0 + ds, x, y));
        }
        self.table = table;
    }

    pub fn total_length(&self) -> f64 {
        self.breaks[self.breaks.len() - 1] - self.breaks[0]
    }

    pub fn start(&self) -> f64 {
        self.breaks[0]
    }

    pub fn end(&self) -> f64 {
        self.breaks[self.breaks.len() - 1]
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    fn segment(&self, s: f64) -> usize {
        match self.breaks.binary_search_by(|b| b.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.breaks.len() - 2),
            Err(i) => i.clamp(1, self.breaks.len() - 1) - 1,
        }
    }

    /// Curvature at arc length `s` (clamped beyond the ends).
    pub fn curvature(&self, s: f64) -> f64 {
        let s = s.clamp(self.start(), self.end());
        let i = self.segment(s);
        let t = (s - self.breaks[i]) / (self.breaks[i + 1] - self.breaks[i]);
        self.kappa[i] + t * (self.kappa[i + 1] - self.kappa[i])
    }

    /// Slope of the curvature profile, zero beyond the ends.
    pub fn curvature_slope(&self, s: f64) -> f64 {
        if s <= self.start() || s >= self.end() {
            return 0.0;
        }
        let i = self.segment(s);
        (self.kappa[i + 1] - self.kappa[i]) / (self.breaks[i + 1] - self.breaks[i])
    }

    /// Corridor bounds on the lateral offset: `(-w_right(s), w_left(s))`.
    pub fn corridor(&self, s: f64) -> (f64, f64) {
        let s = s.clamp(self.start(), self.end());
        let i = self.segment(s);
        let t = (s - self.breaks[i]) / (self.breaks[i + 1] - self.breaks[i]);
        let left = self.w_left[i] + t * (self.w_left[i + 1] - self.w_left[i]);
        let right = self.w_right[i] + t * (self.w_right[i + 1] - self.w_right[i]);
        (-right, left)
    }

    /// Tightest corridor over an arc-length range.
    pub fn corridor_over(&self, s_lo: f64, s_hi: f64) -> (f64, f64) {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        let steps = 8;
        for i in 0..=steps {
            let s = s_lo + (s_hi - s_lo) * i as f64 / steps as f64;
            let (a, b) = self.corridor(s);
            lo = lo.max(a);
            hi = hi.min(b);
        }
        (lo, hi)
    }

    /// Centerline heading at arc length `s` (exact for piecewise-linear
    /// curvature; extended with constant-curvature arcs beyond the ends).
    pub fn heading(&self, s: f64) -> f64 {
        if s <= self.start() {
            return self.psi_breaks[0] + self.kappa[0] * (s - self.start());
        }
        if s >= self.end() {
            let last = self.breaks.len() - 1;
            return self.psi_breaks[last] + self.kappa[last] * (s - self.end());
        }
        let i = self.segment(s);
        let ds = s - self.breaks[i];
        let slope = (self.kappa[i + 1] - self.kappa[i]) / (self.breaks[i + 1] - self.breaks[i]);
        self.psi_breaks[i] + self.kappa[i] * ds + 0.5 * slope * ds * ds
    }

    /// Centerline position at arc length `s`.
    pub fn position(&self, s: f64) -> (f64, f64) {
        let s = s.clamp(self.start(), self.end());
        let i = ((s - self.start()) / self.table_step) as usize;
        let i = i.min(self.table.len() - 2);
        let (s0, x0, y0) = self.table[i];
        let ds = s - s0;
        if ds.abs() < 1e-12 {
            return (x0, y0);
        }
        let p0 = self.heading(s0);
        let pm = self.heading(s0 + 0.5 * ds);
        let p1 = self.heading(s0 + ds);
        (
            x0 + ds / 6.0 * (p0.cos() + 4.0 * pm.cos() + p1.cos()),
            y0 + ds / 6.0 * (p0.sin() + 4.0 * pm.sin() + p1.sin()),
        )
    }

    /// Cartesian pose of a Frenet point.
    pub fn to_cartesian(&self, s: f64, w: f64, theta: f64) -> (f64, f64, f64) {
        let (xc, yc) = self.position(s);
        let psi = self.heading(s);
        (
            xc - w * psi.sin(),
            yc + w * psi.cos(),
            wrap_angle(theta + psi),
        )
    }

    /// Project a Cartesian pose onto the path: arc length of the closest
    /// centerline point (Newton refinement from a coarse scan), signed
    /// lateral offset (positive left) and heading deviation.
    pub fn frenet_project(&self, x: f64, y: f64, psi: f64) -> Result<(f64, f64, f64)> {
        // Coarse scan over the sample table.
        let mut best = (f64::INFINITY, self.start());
        for &(s, px, py) in &self.table {
            let d2 = (px - x).powi(2) + (py - y).powi(2);
            if d2 < best.0 {
                best = (d2, s);
            }
        }
        let mut s = best.1;
        let mut converged = false;
        for _ in 0..50 {
            let (xc, yc) = self.position(s);
            let head = self.heading(s);
            let f = (xc - x) * head.cos() + (yc - y) * head.sin();
            let w = -(x - xc) * head.sin() + (y - yc) * head.cos();
            let fp = 1.0 - self.curvature(s) * w;
            let step = f / fp;
            s = (s - step).clamp(self.start(), self.end());
            if step.abs() < 1e-10 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::OffPath { s_guess: s });
        }
        let (xc, yc) = self.position(s);
        let head = self.heading(s);
        let w = -(x - xc) * head.sin() + (y - yc) * head.cos();
        let (lo, hi) = self.corridor(s);
        let margin = 3.0 * (hi - lo).max(1.0);
        if w < lo - margin || w > hi + margin {
            return Err(Error::OffPath { s_guess: s });
        }
        Ok((s, w, wrap_angle(psi - head)))
    }
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = (a + std::f64::consts::PI).rem_euclid(two_pi);
    if a == 0.0 {
        a = two_pi;
    }
    a - std::f64::consts::PI
}

// ---------------------------------------------------------------------------
// Right-hand sides
// ---------------------------------------------------------------------------

fn resistance(v_x: f64, p: &VehicleParams) -> f64 {
    p.c0 * (v_x / RES_SMOOTHING_SPEED).tanh() + p.c2 * v_x * v_x.abs()
}

fn resistance_deriv(v_x: f64, p: &VehicleParams) -> f64 {
    let t = (v_x / RES_SMOOTHING_SPEED).tanh();
    p.c0 * (1.0 - t * t) / RES_SMOOTHING_SPEED + 2.0 * p.c2 * v_x.abs()
}

/// C1 ramp from 0 below `v_blend_lo` to 1 above `v_blend_hi`.
fn blend_lambda(v_x: f64, p: &VehicleParams) -> (f64, f64) {
    let width = p.v_blend_hi - p.v_blend_lo;
    let t = (v_x - p.v_blend_lo) / width;
    if t <= 0.0 {
        (0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0)
    } else {
        (t * t * (3.0 - 2.0 * t), 6.0 * t * (1.0 - t) / width)
    }
}

fn curvilinear_denominator(x: &[f64], path: &PathModel, guard: bool) -> Result<f64> {
    let denom = 1.0 - path.curvature(x[idx::S]) * x[idx::W];
    if denom <= 0.0 {
        if guard {
            return Ok(DENOM_GUARD);
        }
        return Err(Error::CurvilinearSingularity {
            value: denom,
            s: x[idx::S],
        });
    }
    Ok(if guard { denom.max(DENOM_GUARD) } else { denom })
}

fn dynamic_rhs_impl(
    x: &[f64],
    u: &[f64],
    p: &VehicleParams,
    path: &PathModel,
    guard: bool,
) -> Result<[f64; STATE_DIM]> {
    let (v_x, v_y, r) = (x[idx::VX], x[idx::VY], x[idx::R]);
    let (theta, delta, t_r) = (x[idx::THETA], x[idx::DELTA], x[idx::TR]);
    let kappa = path.curvature(x[idx::S]);
    let denom = curvilinear_denominator(x, path, guard)?;

    // Drive force split evenly across the axles; linear tire forces.
    let f_x = 0.5 * t_r * p.f_max;
    let slip_f = delta - (v_y + p.l_f * r).atan2(v_x);
    let slip_r = -(v_y - p.l_r * r).atan2(v_x);
    let f_yf = p.c_f * slip_f;
    let f_yr = p.c_r * slip_r;
    let f_res = resistance(v_x, p);

    let (sin_d, cos_d) = delta.sin_cos();
    let (sin_t, cos_t) = theta.sin_cos();

    let s_dot = (v_x * cos_t - v_y * sin_t) / denom;
    Ok([
        (f_x * cos_d + f_x - f_yf * sin_d - f_res) / p.mass + r * v_y,
        (f_x * sin_d + f_yr + f_yf * cos_d) / p.mass - r * v_x,
        (p.l_f * (f_yf * cos_d + f_x * sin_d) - p.l_r * f_yr) / p.inertia_z,
        s_dot,
        v_x * sin_t + v_y * cos_t,
        r - kappa * s_dot,
        u[1],
        u[0],
    ])
}

fn kinematic_rhs_impl(
    x: &[f64],
    u: &[f64],
    p: &VehicleParams,
    path: &PathModel,
    guard: bool,
) -> Result<[f64; STATE_DIM]> {
    let (v_x, theta, delta, t_r) = (x[idx::VX], x[idx::THETA], x[idx::DELTA], x[idx::TR]);
    let kappa = path.curvature(x[idx::S]);
    let denom = curvilinear_denominator(x, path, guard)?;
    let wheelbase = p.wheelbase();

    let tan_d = delta.tan();
    let sec2 = 1.0 + tan_d * tan_d;
    // Lateral velocity and yaw rate follow algebraically from v_x and delta.
    let v_y_k = v_x * tan_d * p.l_r / wheelbase;
    let r_k = v_x * tan_d / wheelbase;

    let a_x = (t_r * p.f_max - resistance(v_x, p)) / p.mass;
    // Rate-consistent derivatives of the algebraic relations.
    let lat_rate = a_x * tan_d + v_x * sec2 * u[1];

    let (sin_t, cos_t) = theta.sin_cos();
    let s_dot = (v_x * cos_t - v_y_k * sin_t) / denom;
    Ok([
        a_x,
        lat_rate * p.l_r / wheelbase,
        lat_rate / wheelbase,
        s_dot,
        v_x * sin_t + v_y_k * cos_t,
        r_k - kappa * s_dot,
        u[1],
        u[0],
    ])
}

fn blended_rhs_impl(
    x: &[f64],
    u: &[f64],
    p: &VehicleParams,
    path: &PathModel,
    guard: bool,
) -> Result<[f64; STATE_DIM]> {
    let (lambda, _) = blend_lambda(x[idx::VX], p);
    if lambda == 0.0 {
        return kinematic_rhs_impl(x, u, p, path, guard);
    }
    if lambda == 1.0 {
        return dynamic_rhs_impl(x, u, p, path, guard);
    }
    let dyn_rhs = dynamic_rhs_impl(x, u, p, path, guard)?;
    let kin_rhs = kinematic_rhs_impl(x, u, p, path, guard)?;
    let mut out = [0.0; STATE_DIM];
    for i in 0..STATE_DIM {
        out[i] = lambda * dyn_rhs[i] + (1.0 - lambda) * kin_rhs[i];
    }
    Ok(out)
}

/// Dynamic single-track right-hand side.
pub fn dynamic_rhs(
    x: &CurvilinearState,
    u: [f64; INPUT_DIM],
    p: &VehicleParams,
    path: &PathModel,
) -> Result<[f64; STATE_DIM]> {
    dynamic_rhs_impl(x.to_vector().as_slice(), &u, p, path, false)
}

/// Kinematic bicycle right-hand side in the same frame; finite at zero
/// speed, with lateral velocity and yaw rate tied algebraically to `v_x`
/// and the steering angle.
pub fn kinematic_rhs(
    x: &CurvilinearState,
    u: [f64; INPUT_DIM],
    p: &VehicleParams,
    path: &PathModel,
) -> Result<[f64; STATE_DIM]> {
    kinematic_rhs_impl(x.to_vector().as_slice(), &u, p, path, false)
}

/// Speed-blended fusion of the dynamic and kinematic models: pure kinematic
/// below `v_blend_lo`, pure dynamic above `v_blend_hi`, C1 in between.
pub fn blended_rhs(
    x: &CurvilinearState,
    u: [f64; INPUT_DIM],
    p: &VehicleParams,
    path: &PathModel,
) -> Result<[f64; STATE_DIM]> {
    blended_rhs_impl(x.to_vector().as_slice(), &u, p, path, false)
}

// ---------------------------------------------------------------------------
// Jacobians
// ---------------------------------------------------------------------------

fn curvilinear_rows_jacobian(
    a: &mut DMatrix<f64>,
    x: &[f64],
    v_y_eff: f64,
    dv_y_eff: &[(usize, f64)],
    yaw_from_state: bool,
    path: &PathModel,
    denom: f64,
) {
    let (v_x, theta) = (x[idx::VX], x[idx::THETA]);
    let (sin_t, cos_t) = theta.sin_cos();
    let kappa = path.curvature(x[idx::S]);
    let kappa_slope = path.curvature_slope(x[idx::S]);
    let s_dot = (v_x * cos_t - v_y_eff * sin_t) / denom;
    let w_dot = v_x * sin_t + v_y_eff * cos_t;

    let mut ds = [0.0; STATE_DIM];
    ds[idx::VX] = cos_t / denom;
    ds[idx::THETA] = -w_dot / denom;
    ds[idx::S] = s_dot * kappa_slope * x[idx::W] / denom;
    ds[idx::W] = s_dot * kappa / denom;
    for &(col, d) in dv_y_eff {
        ds[col] += -sin_t / denom * d;
    }

    let mut dw = [0.0; STATE_DIM];
    dw[idx::VX] = sin_t;
    dw[idx::THETA] = v_x * cos_t - v_y_eff * sin_t;
    for &(col, d) in dv_y_eff {
        dw[col] += cos_t * d;
    }

    for c in 0..STATE_DIM {
        a[(idx::S, c)] = ds[c];
        a[(idx::W, c)] = dw[c];
        a[(idx::THETA, c)] = -kappa * ds[c];
    }
    a[(idx::THETA, idx::S)] += -kappa_slope * s_dot;
    if yaw_from_state {
        a[(idx::THETA, idx::R)] += 1.0;
    }
}

/// State and input Jacobians of the dynamic model.
pub fn dynamic_jacobians(
    x: &[f64],
    u: &[f64],
    p: &VehicleParams,
    path: &PathModel,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let _ = u;
    let (v_x, v_y, r) = (x[idx::VX], x[idx::VY], x[idx::R]);
    let (delta, t_r) = (x[idx::DELTA], x[idx::TR]);
    let denom = curvilinear_denominator(x, path, true).unwrap();

    let f_x = 0.5 * t_r * p.f_max;
    let yf = v_y + p.l_f * r;
    let yr = v_y - p.l_r * r;
    let d_f = (v_x * v_x + yf * yf).max(1e-12);
    let d_r = (v_x * v_x + yr * yr).max(1e-12);
    let slip_f = delta - yf.atan2(v_x);
    let f_yf = p.c_f * slip_f;

    // Slip-angle partials with respect to (v_x, v_y, r); delta enters
    // slip_f with coefficient 1.
    let saf = [yf / d_f, -v_x / d_f, -p.l_f * v_x / d_f];
    let sar = [yr / d_r, -v_x / d_r, p.l_r * v_x / d_r];

    let (sin_d, cos_d) = delta.sin_cos();
    let mut a = DMatrix::zeros(STATE_DIM, STATE_DIM);
    let mut b = DMatrix::zeros(STATE_DIM, INPUT_DIM);

    // v_x_dot = (f_x cos_d + f_x - f_yf sin_d - f_res)/m + r v_y
    a[(idx::VX, idx::VX)] = (-sin_d * p.c_f * saf[0] - resistance_deriv(v_x, p)) / p.mass;
    a[(idx::VX, idx::VY)] = -sin_d * p.c_f * saf[1] / p.mass + r;
    a[(idx::VX, idx::R)] = -sin_d * p.c_f * saf[2] / p.mass + v_y;
    a[(idx::VX, idx::DELTA)] = (-f_x * sin_d - p.c_f * sin_d - f_yf * cos_d) / p.mass;
    a[(idx::VX, idx::TR)] = 0.5 * p.f_max * (cos_d + 1.0) / p.mass;

    // v_y_dot = (f_x sin_d + f_yr + f_yf cos_d)/m - r v_x
    a[(idx::VY, idx::VX)] = (p.c_r * sar[0] + cos_d * p.c_f * saf[0]) / p.mass - r;
    a[(idx::VY, idx::VY)] = (p.c_r * sar[1] + cos_d * p.c_f * saf[1]) / p.mass;
    a[(idx::VY, idx::R)] = (p.c_r * sar[2] + cos_d * p.c_f * saf[2]) / p.mass - v_x;
    a[(idx::VY, idx::DELTA)] = (f_x * cos_d + p.c_f * cos_d - f_yf * sin_d) / p.mass;
    a[(idx::VY, idx::TR)] = 0.5 * p.f_max * sin_d / p.mass;

    // r_dot = (l_f (f_yf cos_d + f_x sin_d) - l_r f_yr)/I_z
    for (col, df, dr) in [
        (idx::VX, saf[0], sar[0]),
        (idx::VY, saf[1], sar[1]),
        (idx::R, saf[2], sar[2]),
    ] {
        a[(idx::R, col)] = (p.l_f * cos_d * p.c_f * df - p.l_r * p.c_r * dr) / p.inertia_z;
    }
    a[(idx::R, idx::DELTA)] = p.l_f * (p.c_f * cos_d - f_yf * sin_d + f_x * cos_d) / p.inertia_z;
    a[(idx::R, idx::TR)] = p.l_f * 0.5 * p.f_max * sin_d / p.inertia_z;

    curvilinear_rows_jacobian(&mut a, x, v_y, &[(idx::VY, 1.0)], true, path, denom);

    b[(idx::DELTA, 1)] = 1.0;
    b[(idx::TR, 0)] = 1.0;
    (a, b)
}

/// State and input Jacobians of the kinematic model.
pub fn kinematic_jacobians(
    x: &[f64],
    u: &[f64],
    p: &VehicleParams,
    path: &PathModel,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (v_x, delta) = (x[idx::VX], x[idx::DELTA]);
    let denom = curvilinear_denominator(x, path, true).unwrap();
    let wheelbase = p.wheelbase();
    let tan_d = delta.tan();
    let sec2 = 1.0 + tan_d * tan_d;
    let v_y_k = v_x * tan_d * p.l_r / wheelbase;
    let a_x = (x[idx::TR] * p.f_max - resistance(v_x, p)) / p.mass;
    let a_x_dv = -resistance_deriv(v_x, p) / p.mass;

    let mut a = DMatrix::zeros(STATE_DIM, STATE_DIM);
    let mut b = DMatrix::zeros(STATE_DIM, INPUT_DIM);

    a[(idx::VX, idx::VX)] = a_x_dv;
    a[(idx::VX, idx::TR)] = p.f_max / p.mass;

    // lat_rate = a_x tan_d + v_x sec2 u_delta
    let dlat_dvx = a_x_dv * tan_d + sec2 * u[1];
    let dlat_ddelta = a_x * sec2 + 2.0 * v_x * sec2 * tan_d * u[1];
    let dlat_dtr = p.f_max / p.mass * tan_d;
    let dlat_du = v_x * sec2;
    a[(idx::VY, idx::VX)] = dlat_dvx * p.l_r / wheelbase;
    a[(idx::VY, idx::DELTA)] = dlat_ddelta * p.l_r / wheelbase;
    a[(idx::VY, idx::TR)] = dlat_dtr * p.l_r / wheelbase;
    b[(idx::VY, 1)] = dlat_du * p.l_r / wheelbase;
    a[(idx::R, idx::VX)] = dlat_dvx / wheelbase;
    a[(idx::R, idx::DELTA)] = dlat_ddelta / wheelbase;
    a[(idx::R, idx::TR)] = dlat_dtr / wheelbase;
    b[(idx::R, 1)] = dlat_du / wheelbase;

    // Kinematic lateral velocity feeds the curvilinear rows.
    let dv_y_eff = [
        (idx::VX, tan_d * p.l_r / wheelbase),
        (idx::DELTA, v_x * sec2 * p.l_r / wheelbase),
    ];
    curvilinear_rows_jacobian(&mut a, x, v_y_k, &dv_y_eff, false, path, denom);
    // theta_dot = r_k - kappa s_dot with r_k = v_x tan_d / L.
    a[(idx::THETA, idx::VX)] += tan_d / wheelbase;
    a[(idx::THETA, idx::DELTA)] += v_x * sec2 / wheelbase;

    b[(idx::DELTA, 1)] = 1.0;
    b[(idx::TR, 0)] = 1.0;
    (a, b)
}

/// Jacobians of the blended model, including the blend-weight derivative.
pub fn blended_jacobians(
    x: &[f64],
    u: &[f64],
    p: &VehicleParams,
    path: &PathModel,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (lambda, dlambda) = blend_lambda(x[idx::VX], p);
    if lambda == 0.0 {
        return kinematic_jacobians(x, u, p, path);
    }
    if lambda == 1.0 {
        return dynamic_jacobians(x, u, p, path);
    }
    let (a_dyn, b_dyn) = dynamic_jacobians(x, u, p, path);
    let (a_kin, b_kin) = kinematic_jacobians(x, u, p, path);
    let f_dyn = dynamic_rhs_impl(x, u, p, path, true).unwrap();
    let f_kin = kinematic_rhs_impl(x, u, p, path, true).unwrap();
    let mut a = a_dyn * lambda + a_kin * (1.0 - lambda);
    for row in 0..STATE_DIM {
        a[(row, idx::VX)] += dlambda * (f_dyn[row] - f_kin[row]);
    }
    (a, b_dyn * lambda + b_kin * (1.0 - lambda))
}

// ---------------------------------------------------------------------------
// Dynamics interface used by the transcriptions
// ---------------------------------------------------------------------------

/// Continuous-time dynamics with hand-coded Jacobians.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// `(df/dx, df/du)` at the given point.
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>);
}

/// The blended single-track model bound to a path and parameter set.
/// Inside the optimizer the curvilinear denominator is clamped rather than
/// rejected, so linearizations stay finite on tentative iterates.
#[derive(Debug, Clone)]
pub struct BlendedVehicle {
    pub params: VehicleParams,
    pub path: std::sync::Arc<PathModel>,
}

impl BlendedVehicle {
    pub fn new(params: VehicleParams, path: std::sync::Arc<PathModel>) -> Self {
        Self { params, path }
    }
}

impl Dynamics for BlendedVehicle {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn input_dim(&self) -> usize {
        INPUT_DIM
    }

    fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let out = blended_rhs_impl(x.as_slice(), u.as_slice(), &self.params, &self.path, true)
            .expect("guarded rhs is total");
        DVector::from_row_slice(&out)
    }

    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        blended_jacobians(x.as_slice(), u.as_slice(), &self.params, &self.path)
    }
}

/// Central finite-difference Jacobians of any dynamics; verification helper.
pub fn fd_jacobians(
    dynamics: &dyn Dynamics,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let nx = dynamics.state_dim();
    let nu = dynamics.input_dim();
    let mut a = DMatrix::zeros(nx, nx);
    let mut b = DMatrix::zeros(nx, nu);
    for j in 0..nx {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (dynamics.rhs(&xp, u) - dynamics.rhs(&xm, u)) / (2.0 * h);
        a.column_mut(j).copy_from(&col);
    }
    for j in 0..nu {
        let mut up = u.clone();
        let mut um = u.clone();
        up[j] += h;
        um[j] -= h;
        let col = (dynamics.rhs(x, &up) - dynamics.rhs(x, &um)) / (2.0 * h);
        b.column_mut(j).copy_from(&col);
    }
    (a, b)
}
