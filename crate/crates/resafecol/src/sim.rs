//! Closed-loop simulation: NMPC in the loop at a fixed control period
//! against a plant of the same model family with deliberately perturbed
//! parameters, scripted obstacles, per-cycle logging, and the
//! crash-avoidance metric.
//!
//! The controller only ever sees the measured state and its own nominal
//! parameters; the plant integrates the perturbed ones. Every run is fully
//! deterministic: identical scenarios produce bit-identical logs except for
//! the wall-clock timing fields.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::ocp::{BarrierConstraint, OcpSpec, Reference};
use crate::safety::{barrier_h, CbfGains, ObstacleEllipse, DEFAULT_DETECTION_RANGE};
use crate::solver::{sqp_solve, SolveOptions, SolveStats};
use crate::transcription::{DmsTranscriber, NlpMeta, ResafecolTranscriber};
use crate::vehicle::{
    blended_rhs, idx, BlendedVehicle, CurvilinearState, PathModel, VehicleParams, INPUT_DIM,
    STATE_DIM,
};

/// Control period of the NMPC loop [s].
pub const CYCLE_DT: f64 = 0.05;
/// Maximum plant integration substep [s].
pub const PLANT_SUBSTEP: f64 = 0.005;

/// Transcription method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Dms,
    Psc,
    Resafecol,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Dms => "dms",
            Method::Psc => "psc",
            Method::Resafecol => "resafecol",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dms" => Ok(Method::Dms),
            "psc" => Ok(Method::Psc),
            "resafecol" => Ok(Method::Resafecol),
            other => Err(Error::Scenario(format!(
                "unknown method '{other}' (expected dms | psc | resafecol)"
            ))),
        }
    }
}

/// Multiplicative parameter perturbations applied to the plant only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantMismatch {
    pub mass_scale: f64,
    pub cornering_stiffness_scale: f64,
    pub inertia_scale: f64,
}

impl Default for PlantMismatch {
    fn default() -> Self {
        Self {
            mass_scale: 1.15,
            cornering_stiffness_scale: 0.8,
            inertia_scale: 1.1,
        }
    }
}

impl PlantMismatch {
    pub fn apply(&self, nominal: &VehicleParams) -> VehicleParams {
        let mut p = *nominal;
        p.mass *= self.mass_scale;
        p.c_f *= self.cornering_stiffness_scale;
        p.c_r *= self.cornering_stiffness_scale;
        p.inertia_z *= self.inertia_scale;
        p
    }
}

/// Obstacle motion script.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObstacleMotion {
    Static,
    /// Moves from the start of the run.
    ConstantVelocity { v_s: f64, v_w: f64 },
    /// Hidden until the vehicle is within `trigger_distance` along the
    /// path, then appears and moves.
    Triggered {
        trigger_distance: f64,
        v_s: f64,
        v_w: f64,
    },
}

/// An obstacle instance in a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioObstacle {
    pub s: f64,
    pub w: f64,
    /// Enlarged ellipse semi-axes.
    pub a: f64,
    pub b: f64,
    pub detection_range: f64,
    pub motion: ObstacleMotion,
}

impl ScenarioObstacle {
    pub fn static_at(s: f64, w: f64, a: f64, b: f64) -> Self {
        Self {
            s,
            w,
            a,
            b,
            detection_range: DEFAULT_DETECTION_RANGE,
            motion: ObstacleMotion::Static,
        }
    }
}

/// Controller-side solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub max_sqp_iterations: usize,
    pub qp_tolerance: f64,
    pub qp_max_iterations: usize,
    /// Deterministic per-cycle compute budget in solver work units; stands
    /// in for the real-time deadline without depending on the host machine.
    pub work_budget: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_sqp_iterations: 3,
            qp_tolerance: 1e-4,
            qp_max_iterations: 4000,
            work_budget: None,
        }
    }
}

impl SolverSettings {
    pub fn to_solve_options(&self) -> SolveOptions {
        SolveOptions {
            max_sqp_iterations: self.max_sqp_iterations,
            qp_tolerance: self.qp_tolerance,
            qp_max_iterations: self.qp_max_iterations,
            work_budget: self.work_budget,
            ..SolveOptions::real_time()
        }
    }
}

/// Input-rate and state bounds used by the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundSettings {
    pub v_min: f64,
    pub v_max: f64,
    pub theta_max: f64,
    pub delta_rate_max: f64,
    pub traction_rate_max: f64,
}

impl Default for BoundSettings {
    fn default() -> Self {
        Self {
            v_min: -1.0,
            v_max: 30.0,
            theta_max: 1.0,
            delta_rate_max: 0.7,
            traction_rate_max: 2.0,
        }
    }
}

/// A complete closed-loop experiment description.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub path: Arc<PathModel>,
    pub initial_state: CurvilinearState,
    pub target_speed: f64,
    pub obstacles: Vec<ScenarioObstacle>,
    /// Prediction horizon [s]; 3.0 (long) and 1.75 (short) are the
    /// standard presets.
    pub t_f: f64,
    pub method: Method,
    pub cbf: bool,
    /// Hull regions (collocation methods).
    pub regions: usize,
    /// Spline degree.
    pub degree: usize,
    /// Collocation nodes.
    pub nodes: usize,
    /// Shooting nodes for the DMS baseline.
    pub dms_nodes: usize,
    pub plant_mismatch: PlantMismatch,
    pub duration: f64,
    pub seed: u64,
    pub vehicle: VehicleParams,
    pub gains: CbfGains,
    pub solver: SolverSettings,
    pub bounds: BoundSettings,
    /// Weights of the tracking cost.
    pub q_diag: [f64; STATE_DIM],
    pub r_diag: [f64; INPUT_DIM],
}

impl Scenario {
    /// A scenario on the given path with the documented defaults
    /// (`K = 3`, `M = 5`, `N = 6`, `t_f = 3.0`).
    pub fn new(name: impl Into<String>, path: Arc<PathModel>) -> Self {
        Self {
            name: name.into(),
            path,
            initial_state: CurvilinearState {
                v_x: 15.0,
                ..Default::default()
            },
            target_speed: 20.0,
            obstacles: Vec::new(),
            t_f: 3.0,
            method: Method::Resafecol,
            cbf: false,
            regions: 3,
            degree: 5,
            nodes: 6,
            dms_nodes: 60,
            plant_mismatch: PlantMismatch::default(),
            duration: 10.0,
            seed: 0,
            vehicle: VehicleParams::default(),
            gains: CbfGains::default(),
            solver: SolverSettings::default(),
            bounds: BoundSettings::default(),
            q_diag: [3.1, 10.0, 10.0, 0.0, 5.2, 48.0, 0.9, 1.5],
            r_diag: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::Scenario("duration must be positive".into()));
        }
        if !(self.t_f > 0.0) {
            return Err(Error::Scenario("horizon must be positive".into()));
        }
        if self.cbf && self.method == Method::Dms {
            return Err(Error::Scenario(
                "CBF rows need spline derivatives; dms supports the position constraint only"
                    .into(),
            ));
        }
        self.vehicle.validate()?;
        self.initial_state.validate(&self.vehicle, &self.path)?;
        for (i, obs) in self.obstacles.iter().enumerate() {
            if !(obs.a > 0.0) || !(obs.b > 0.0) {
                return Err(Error::Scenario(format!(
                    "obstacle {i}: semi-axes must be positive"
                )));
            }
            if obs.s < self.path.start() || obs.s > self.path.end() {
                return Err(Error::Scenario(format!(
                    "obstacle {i}: s = {} outside the path [{}, {}]",
                    obs.s,
                    self.path.start(),
                    self.path.end()
                )));
            }
            let (lo, hi) = self.path.corridor(obs.s);
            if obs.w < lo - obs.b || obs.w > hi + obs.b {
                return Err(Error::Scenario(format!(
                    "obstacle {i}: w = {} outside the corridor [{lo}, {hi}]",
                    obs.w
                )));
            }
        }
        Ok(())
    }
}

/// One NMPC cycle in the log.
#[derive(Debug, Clone)]
pub struct CycleRecord {
    pub cycle: usize,
    pub time: f64,
    pub state: CurvilinearState,
    /// Cartesian pose reconstructed from the path.
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    /// Applied input rates `[dt_r, ddelta]`.
    pub input: [f64; INPUT_DIM],
    pub stats: SolveStats,
    pub solver_failed: bool,
    /// Barrier value per obstacle; `None` while a triggered obstacle is
    /// still hidden.
    pub obstacle_h: Vec<Option<f64>>,
    pub in_detection: bool,
    pub in_crash: bool,
}

/// Timestamped record of one closed-loop run.
#[derive(Debug, Clone)]
pub struct ClosedLoopLog {
    pub scenario_name: String,
    pub method: String,
    pub cbf: bool,
    pub records: Vec<CycleRecord>,
    pub aborted: Option<String>,
    pub nlp_meta: NlpMeta,
}

impl ClosedLoopLog {
    pub fn detection_cycles(&self) -> usize {
        self.records.iter().filter(|r| r.in_detection).count()
    }

    /// Percentage of detection-time cycles spent outside every enlarged
    /// obstacle ellipse; 100 when no obstacle was ever detected.
    pub fn crash_avoidance_percent(&self) -> f64 {
        crash_avoidance_metric(self)
    }

    pub fn crash_percent(&self) -> f64 {
        100.0 - self.crash_avoidance_percent()
    }

    pub fn mean_solve_ms(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.stats.wall_time_ms).sum::<f64>() / self.records.len() as f64
    }

    pub fn solve_ms_percentile(&self, q: f64) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let mut times: Vec<f64> = self.records.iter().map(|r| r.stats.wall_time_ms).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = (q * (times.len() - 1) as f64).round() as usize;
        times[pos]
    }

    pub fn min_speed(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.state.v_x)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_h(&self) -> f64 {
        self.records
            .iter()
            .flat_map(|r| r.obstacle_h.iter().flatten())
            .fold(f64::INFINITY, |m, &h| m.min(h))
    }

    pub fn solver_failures(&self) -> usize {
        self.records.iter().filter(|r| r.solver_failed).count()
    }
}

/// The crash-avoidance percentage: the share of detection cycles during
/// which the vehicle is outside every enlarged obstacle ellipse.
pub fn crash_avoidance_metric(log: &ClosedLoopLog) -> f64 {
    let detection = log.detection_cycles();
    if detection == 0 {
        return 100.0;
    }
    let safe = log
        .records
        .iter()
        .filter(|r| r.in_detection && !r.in_crash)
        .count();
    100.0 * safe as f64 / detection as f64
}

/// Integrate the plant by `dt` with RK4 substeps of at most
/// [`PLANT_SUBSTEP`], holding the input rates constant. Actuator states are
/// saturated at their physical limits after every substep.
pub fn step_plant(
    state: &CurvilinearState,
    rates: [f64; INPUT_DIM],
    dt: f64,
    params: &VehicleParams,
    path: &PathModel,
) -> Result<CurvilinearState> {
    let substeps = (dt / PLANT_SUBSTEP).ceil().max(1.0) as usize;
    let h = dt / substeps as f64;
    let mut x = *state;
    for _ in 0..substeps {
        let k1 = blended_rhs(&x, rates, params, path)?;
        let advance = |base: &CurvilinearState, k: &[f64; STATE_DIM], scale: f64| {
            let mut v = base.to_vector();
            for i in 0..STATE_DIM {
                v[i] += k[i] * scale;
            }
            CurvilinearState::from_slice(v.as_slice())
        };
        let k2 = blended_rhs(&advance(&x, &k1, h / 2.0), rates, params, path)?;
        let k3 = blended_rhs(&advance(&x, &k2, h / 2.0), rates, params, path)?;
        let k4 = blended_rhs(&advance(&x, &k3, h), rates, params, path)?;
        let mut v = x.to_vector();
        for i in 0..STATE_DIM {
            v[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        x = CurvilinearState::from_slice(v.as_slice());
        x.delta = x.delta.clamp(-params.delta_max, params.delta_max);
        x.t_r = x.t_r.clamp(-1.0, 1.0);
    }
    Ok(x)
}

enum ControllerKind {
    Spline(ResafecolTranscriber),
    Shooting(DmsTranscriber),
}

/// Obstacle bookkeeping during a run.
struct ObstacleState {
    spec: ScenarioObstacle,
    /// Time at which the obstacle became active; `None` while hidden.
    active_since: Option<f64>,
}

impl ObstacleState {
    fn new(spec: ScenarioObstacle, ego_s: f64) -> Self {
        let mut state = Self {
            spec,
            active_since: None,
        };
        match spec.motion {
            ObstacleMotion::Triggered { .. } => state.update_trigger(ego_s, 0.0),
            _ => state.active_since = Some(0.0),
        }
        state
    }

    fn update_trigger(&mut self, ego_s: f64, time: f64) {
        if self.active_since.is_none() {
            if let ObstacleMotion::Triggered {
                trigger_distance, ..
            } = self.spec.motion
            {
                if self.spec.s - ego_s <= trigger_distance {
                    self.active_since = Some(time);
                }
            }
        }
    }

    fn velocity(&self) -> (f64, f64) {
        match self.spec.motion {
            ObstacleMotion::Static => (0.0, 0.0),
            ObstacleMotion::ConstantVelocity { v_s, v_w } => (v_s, v_w),
            ObstacleMotion::Triggered { v_s, v_w, .. } => (v_s, v_w),
        }
    }

    /// Current Frenet position, `None` while hidden.
    fn position(&self, time: f64) -> Option<(f64, f64)> {
        let since = self.active_since?;
        let (v_s, v_w) = self.velocity();
        let dt = time - since;
        Some((self.spec.s + v_s * dt, self.spec.w + v_w * dt))
    }
}

/// Run the NMPC loop over the scenario and return the per-cycle log.
pub fn run_closed_loop(scenario: &Scenario) -> Result<ClosedLoopLog> {
    scenario.validate()?;
    let path = scenario.path.clone();
    let nominal = scenario.vehicle;
    let plant_params = scenario.plant_mismatch.apply(&nominal);
    let dynamics = Arc::new(BlendedVehicle::new(nominal, path.clone()));

    let controller = match scenario.method {
        Method::Resafecol => ControllerKind::Spline(ResafecolTranscriber::new(
            STATE_DIM,
            INPUT_DIM,
            scenario.t_f,
            scenario.degree,
            scenario.nodes,
            scenario.regions,
        )?),
        Method::Psc => ControllerKind::Spline(ResafecolTranscriber::new_nodes_only(
            STATE_DIM,
            INPUT_DIM,
            scenario.t_f,
            scenario.degree,
            scenario.nodes,
        )?),
        Method::Dms => ControllerKind::Shooting(DmsTranscriber::new(
            STATE_DIM,
            INPUT_DIM,
            scenario.t_f,
            scenario.dms_nodes,
            1,
        )?),
    };

    let mut base_ocp = OcpSpec::new(dynamics, scenario.t_f)?;
    base_ocp.q_diag = DVector::from_row_slice(&scenario.q_diag);
    base_ocp.r_diag = DVector::from_row_slice(&scenario.r_diag);
    let mut reference = DVector::zeros(STATE_DIM);
    reference[idx::VX] = scenario.target_speed;
    base_ocp.reference = Reference::Constant(reference);
    base_ocp.u_lower = DVector::from_vec(vec![
        -scenario.bounds.traction_rate_max,
        -scenario.bounds.delta_rate_max,
    ]);
    base_ocp.u_upper = DVector::from_vec(vec![
        scenario.bounds.traction_rate_max,
        scenario.bounds.delta_rate_max,
    ]);

    let opts = scenario.solver.to_solve_options();
    let cycles = (scenario.duration / CYCLE_DT).round() as usize;
    let mut plant = scenario.initial_state;
    let mut obstacles: Vec<ObstacleState> = scenario
        .obstacles
        .iter()
        .map(|&spec| ObstacleState::new(spec, plant.s))
        .collect();
    let mut prev_solution: Option<DVector<f64>> = None;
    let mut prev_input = [0.0; INPUT_DIM];
    let mut records = Vec::with_capacity(cycles);
    let mut aborted = None;
    let mut nlp_meta: Option<NlpMeta> = None;

    for cycle in 0..cycles {
        let time = cycle as f64 * CYCLE_DT;
        for obs in obstacles.iter_mut() {
            obs.update_trigger(plant.s, time);
        }

        // Measured state; bounds widened to always contain it.
        let measured = plant;
        let mut ocp = base_ocp.clone();
        ocp.initial_state = measured.to_vector();

        let horizon_reach = measured.s + measured.v_x.max(5.0) * scenario.t_f;
        let (w_lo, w_hi) = path.corridor_over(measured.s, horizon_reach);
        let mut x_lower = DVector::from_element(STATE_DIM, f64::NEG_INFINITY);
        let mut x_upper = DVector::from_element(STATE_DIM, f64::INFINITY);
        x_lower[idx::VX] = scenario.bounds.v_min;
        x_upper[idx::VX] = scenario.bounds.v_max;
        x_lower[idx::W] = w_lo;
        x_upper[idx::W] = w_hi;
        x_lower[idx::THETA] = -scenario.bounds.theta_max;
        x_upper[idx::THETA] = scenario.bounds.theta_max;
        x_lower[idx::DELTA] = -nominal.delta_max;
        x_upper[idx::DELTA] = nominal.delta_max;
        x_lower[idx::TR] = -1.0;
        x_upper[idx::TR] = 1.0;
        for c in 0..STATE_DIM {
            x_lower[c] = x_lower[c].min(measured.to_vector()[c] - 1e-6);
            x_upper[c] = x_upper[c].max(measured.to_vector()[c] + 1e-6);
        }
        ocp.x_lower = x_lower;
        ocp.x_upper = x_upper;

        // Obstacles in detection range enter the problem with their
        // constant-velocity extrapolation.
        let (ego_x, ego_y, _) = path.to_cartesian(measured.s, measured.w, measured.theta);
        let mut in_detection = false;
        let mut obstacle_h = Vec::with_capacity(obstacles.len());
        for obs in &obstacles {
            let Some((s_obs, w_obs)) = obs.position(time) else {
                obstacle_h.push(None);
                continue;
            };
            let (ox, oy, _) = path.to_cartesian(s_obs, w_obs, 0.0);
            let distance = ((ox - ego_x).powi(2) + (oy - ego_y).powi(2)).sqrt();
            let ellipse = ObstacleEllipse {
                s0: s_obs,
                w0: w_obs,
                v_s: obs.velocity().0,
                v_w: obs.velocity().1,
                a: obs.spec.a,
                b: obs.spec.b,
                detection_range: obs.spec.detection_range,
            };
            obstacle_h.push(Some(barrier_h(measured.s, measured.w, &ellipse, 0.0)));
            if distance <= obs.spec.detection_range {
                in_detection = true;
                ocp.constraints.push(BarrierConstraint {
                    obstacle: ellipse,
                    gains: scenario.cbf.then_some(scenario.gains),
                    s_index: idx::S,
                    w_index: idx::W,
                });
            }
        }
        let in_crash = obstacle_h
            .iter()
            .flatten()
            .any(|&h| h < 0.0);

        // Transcribe and solve, warm-started from the shifted previous
        // solution.
        let solve_result = (|| -> Result<(DVector<f64>, SolveStats, [f64; INPUT_DIM], NlpMeta)> {
            let (nlp, init) = match &controller {
                ControllerKind::Spline(trans) => {
                    let nlp = trans.transcribe(&ocp)?;
                    let init = match &prev_solution {
                        Some(z) if z.len() == nlp.dim() => {
                            Some(trans.shift_initial_guess(z, CYCLE_DT)?)
                        }
                        _ => None,
                    };
                    (nlp, init)
                }
                ControllerKind::Shooting(trans) => {
                    let nlp = trans.transcribe(&ocp)?;
                    let init = match &prev_solution {
                        Some(z) if z.len() == nlp.dim() => {
                            Some(trans.shift_initial_guess(z, CYCLE_DT))
                        }
                        _ => None,
                    };
                    (nlp, init)
                }
            };
            let (z, stats) = sqp_solve(&nlp, init.as_ref(), &opts)?;
            let input = match &controller {
                ControllerKind::Spline(trans) => {
                    let u = trans.context().input_at(&z, -1.0);
                    [u[0], u[1]]
                }
                ControllerKind::Shooting(trans) => {
                    let u = trans.input_at_node(&z, 0);
                    [u[0], u[1]]
                }
            };
            let meta = nlp.meta.clone();
            Ok((z, stats, input, meta))
        })();

        let (input, stats, solver_failed) = match solve_result {
            Ok((z, stats, input, meta)) => {
                prev_solution = Some(z);
                nlp_meta.get_or_insert(meta);
                (input, stats, false)
            }
            Err(_) => {
                // Fail-operational: hold the previous input, flag the cycle.
                (prev_input, SolveStats::default(), true)
            }
        };
        prev_input = input;

        let (x, y, psi) = path.to_cartesian(measured.s, measured.w, measured.theta);
        records.push(CycleRecord {
            cycle,
            time,
            state: measured,
            x,
            y,
            psi,
            input,
            stats,
            solver_failed,
            obstacle_h,
            in_detection,
            in_crash,
        });

        match step_plant(&plant, input, CYCLE_DT, &plant_params, &path) {
            Ok(next) => plant = next,
            Err(e) => {
                aborted = Some(e.to_string());
                break;
            }
        }
        if plant.s > path.end() - 5.0 {
            break; // ran off the end of the track
        }
    }

    Ok(ClosedLoopLog {
        scenario_name: scenario.name.clone(),
        method: scenario.method.as_str().to_string(),
        cbf: scenario.cbf,
        records,
        aborted,
        nlp_meta: nlp_meta.unwrap_or(NlpMeta {
            method: scenario.method.as_str().to_string(),
            primal_dim: 0,
            slack_dim: 0,
            equality_rows: 0,
            inequality_rows: 0,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn straight() -> Arc<PathModel> {
        Arc::new(PathModel::straight(600.0, 3.5).unwrap())
    }

    #[test]
    fn plant_advances_straight() {
        let params = VehicleParams::default();
        let path = straight();
        let state = CurvilinearState {
            v_x: 10.0,
            s: 5.0,
            ..Default::default()
        };
        let next = step_plant(&state, [0.0, 0.0], 0.05, &params, &path).unwrap();
        assert_abs_diff_eq!(next.s, 5.0 + 10.0 * 0.05, epsilon = 2e-3);
        assert_abs_diff_eq!(next.w, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn plant_steering_symmetry() {
        let params = VehicleParams::default();
        let path = straight();
        let state = CurvilinearState {
            v_x: 12.0,
            s: 50.0,
            ..Default::default()
        };
        let mut left = state;
        let mut right = state;
        for _ in 0..20 {
            left = step_plant(&left, [0.0, 0.3], 0.05, &params, &path).unwrap();
            right = step_plant(&right, [0.0, -0.3], 0.05, &params, &path).unwrap();
        }
        assert_abs_diff_eq!(left.w, -right.w, epsilon = 1e-9);
        assert_abs_diff_eq!(left.theta, -right.theta, epsilon = 1e-9);
        assert_abs_diff_eq!(left.v_x, right.v_x, epsilon = 1e-9);
    }

    #[test]
    fn rk4_richardson_order() {
        // Global error against a fine reference drops ~16x when halving dt.
        let params = VehicleParams::default();
        let path = straight();
        let state = CurvilinearState {
            v_x: 12.0,
            s: 10.0,
            delta: 0.02,
            ..Default::default()
        };
        let rates = [0.1, 0.05];
        let total = 0.4;
        let run = |steps: usize| -> DVector<f64> {
            let dt = total / steps as f64;
            let mut x = state;
            for _ in 0..steps {
                // Integrate with a single substep of length dt.
                let k1 = blended_rhs(&x, rates, &params, &path).unwrap();
                let adv = |b: &CurvilinearState, k: &[f64; STATE_DIM], s: f64| {
                    let mut v = b.to_vector();
                    for i in 0..STATE_DIM {
                        v[i] += k[i] * s;
                    }
                    CurvilinearState::from_slice(v.as_slice())
                };
                let k2 = blended_rhs(&adv(&x, &k1, dt / 2.0), rates, &params, &path).unwrap();
                let k3 = blended_rhs(&adv(&x, &k2, dt / 2.0), rates, &params, &path).unwrap();
                let k4 = blended_rhs(&adv(&x, &k3, dt), rates, &params, &path).unwrap();
                let mut v = x.to_vector();
                for i in 0..STATE_DIM {
                    v[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                x = CurvilinearState::from_slice(v.as_slice());
            }
            x.to_vector()
        };
        let reference = run(512);
        let coarse = (run(4) - &reference).amax();
        let fine = (run(8) - &reference).amax();
        let ratio = coarse / fine;
        assert!(
            (10.0..26.0).contains(&ratio),
            "Richardson ratio {ratio:.1} outside the fourth-order window"
        );
    }

    #[test]
    fn crash_metric_counts_detection_cycles() {
        let mk_record = |in_detection: bool, h: f64| CycleRecord {
            cycle: 0,
            time: 0.0,
            state: CurvilinearState::default(),
            x: 0.0,
            y: 0.0,
            psi: 0.0,
            input: [0.0; 2],
            stats: SolveStats::default(),
            solver_failed: false,
            obstacle_h: vec![Some(h)],
            in_detection,
            in_crash: h < 0.0,
        };
        let mut log = ClosedLoopLog {
            scenario_name: "metric".into(),
            method: "resafecol".into(),
            cbf: false,
            records: vec![],
            aborted: None,
            nlp_meta: NlpMeta {
                method: "resafecol".into(),
                primal_dim: 0,
                slack_dim: 0,
                equality_rows: 0,
                inequality_rows: 0,
            },
        };
        assert_eq!(crash_avoidance_metric(&log), 100.0);
        log.records = vec![
            mk_record(true, 1.0),
            mk_record(true, -0.5),
            mk_record(false, -0.5),
            mk_record(true, 2.0),
            mk_record(true, -0.1),
        ];
        assert_abs_diff_eq!(crash_avoidance_metric(&log), 50.0, epsilon = 1e-12);
    }

    #[test]
    fn tracking_on_empty_road() {
        let mut scenario = Scenario::new("tracking", straight());
        scenario.duration = 8.0;
        scenario.target_speed = 20.0;
        scenario.initial_state.v_x = 15.0;
        let log = run_closed_loop(&scenario).unwrap();
        assert!(log.aborted.is_none());
        let last = log.records.last().unwrap();
        assert!(
            (last.state.v_x - 20.0).abs() < 0.5,
            "terminal speed {}",
            last.state.v_x
        );
        assert!(last.state.w.abs() < 0.1, "lateral offset {}", last.state.w);
        assert_eq!(log.crash_avoidance_percent(), 100.0);
    }

    #[test]
    fn deterministic_logs() {
        let mut scenario = Scenario::new("determinism", straight());
        scenario.duration = 2.0;
        scenario
            .obstacles
            .push(ScenarioObstacle::static_at(120.0, 0.0, 3.0, 2.0));
        let a = run_closed_loop(&scenario).unwrap();
        let b = run_closed_loop(&scenario).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.state, rb.state);
            assert_eq!(ra.input, rb.input);
            assert_eq!(ra.obstacle_h, rb.obstacle_h);
            assert_eq!(ra.stats.cost.to_bits(), rb.stats.cost.to_bits());
        }
    }
}
