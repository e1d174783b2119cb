//! Integration tests for the three transcriptions against analytic and
//! brute-force oracles.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;

use resafecol::basis::eval_spline;
use resafecol::ocp::{BarrierConstraint, DoubleIntegrator, OcpSpec, Reference, SingleIntegrator};
use resafecol::safety::{CbfGains, ObstacleEllipse};
use resafecol::solver::{sqp_solve, SolveOptions};
use resafecol::transcription::{
    fd_gradient_error, fd_jacobian_error, transcribe_dms, transcribe_psc, transcribe_resafecol,
    ResafecolTranscriber,
};

/// Minimum-energy double integrator: cubic position trajectory through the
/// boundary conditions; returns the exact optimal cost of `int u^2 dt`.
fn min_energy_cost(x0: f64, v0: f64, x_t: f64, v_t: f64, t: f64) -> f64 {
    // x(t) = x0 + v0 t + c t^2 + d t^3 with two terminal conditions.
    let a = DMatrix::from_row_slice(2, 2, &[t * t, t * t * t, 2.0 * t, 3.0 * t * t]);
    let b = DVector::from_vec(vec![x_t - x0 - v0 * t, v_t - v0]);
    let cd = a.lu().solve(&b).unwrap();
    let (c, d) = (cd[0], cd[1]);
    4.0 * c * c * t + 12.0 * c * d * t * t + 12.0 * d * d * t * t * t
}

fn min_energy_ocp() -> OcpSpec {
    let mut ocp = OcpSpec::new(Arc::new(DoubleIntegrator), 2.0).unwrap();
    ocp.initial_state = DVector::from_vec(vec![0.0, 0.0]);
    ocp.terminal_lower = DVector::from_vec(vec![1.0, 0.0]);
    ocp.terminal_upper = DVector::from_vec(vec![1.0, 0.0]);
    ocp
}

#[test]
fn analytic_oracle_sanity() {
    // Hand value for the canonical instance: u(t) = 1.5 (1 - t) on [0, 2].
    let cost = min_energy_cost(0.0, 0.0, 1.0, 0.0, 2.0);
    assert!((cost - 1.5).abs() < 1e-12, "oracle cost {cost}");
}

#[test]
fn double_integrator_all_methods_match_analytic() {
    let ocp = min_energy_ocp();
    let analytic = min_energy_cost(0.0, 0.0, 1.0, 0.0, 2.0);
    let opts = SolveOptions::to_convergence();

    let resafecol = transcribe_resafecol(&ocp, 5, 8, 3).unwrap();
    let (z, stats) = sqp_solve(&resafecol, None, &opts).unwrap();
    assert!(stats.max_constraint_violation < 1e-6);
    assert!(
        (stats.cost - analytic).abs() < 1e-4,
        "resafecol cost {} vs analytic {analytic}",
        stats.cost
    );
    let _ = z;

    let psc = transcribe_psc(&ocp, 5, 8).unwrap();
    let (_, stats) = sqp_solve(&psc, None, &opts).unwrap();
    assert!(
        (stats.cost - analytic).abs() < 1e-4,
        "psc cost {} vs analytic {analytic}",
        stats.cost
    );

    let dms = transcribe_dms(&ocp, 200, 1).unwrap();
    let (_, stats) = sqp_solve(&dms, None, &opts).unwrap();
    assert!(
        (stats.cost - analytic).abs() < 1e-4,
        "dms cost {} vs analytic {analytic}",
        stats.cost
    );
}

#[test]
fn resafecol_decision_dimension() {
    // 8 states, 2 inputs, degree 5: 60 spline coefficients plus slacks.
    use resafecol::vehicle::{BlendedVehicle, PathModel, VehicleParams};
    let path = Arc::new(PathModel::straight(300.0, 3.5).unwrap());
    let vehicle = Arc::new(BlendedVehicle::new(VehicleParams::default(), path));
    let mut ocp = OcpSpec::new(vehicle, 3.0).unwrap();
    ocp.initial_state[0] = 10.0;
    ocp.constraints.push(BarrierConstraint {
        obstacle: ObstacleEllipse::static_at(50.0, 0.0, 3.0, 2.0).unwrap(),
        gains: Some(CbfGains::default()),
        s_index: 3,
        w_index: 4,
    });
    let nlp = transcribe_resafecol(&ocp, 5, 6, 3).unwrap();
    assert_eq!(nlp.meta.primal_dim, 60);
    assert_eq!(nlp.meta.slack_dim, 3 * 2); // one h + one CBF slack per region
    assert_eq!(nlp.dim(), 66);
    // Initial condition plus defects at all but the first node.
    assert_eq!(nlp.meta.equality_rows, 8 * 6);

    let dms = transcribe_dms(
        &{
            let mut o = ocp.clone();
            o.constraints[0].gains = None;
            o
        },
        60,
        1,
    )
    .unwrap();
    assert_eq!(dms.meta.primal_dim, 600);
    assert!(nlp.meta.primal_dim * 5 <= dms.meta.primal_dim);
}

#[test]
fn dms_rejects_cbf_constraints() {
    let mut ocp = min_energy_ocp();
    ocp.constraints.push(BarrierConstraint {
        obstacle: ObstacleEllipse::static_at(0.5, 0.0, 0.2, 0.2).unwrap(),
        gains: Some(CbfGains::default()),
        s_index: 0,
        w_index: 1,
    });
    assert!(transcribe_dms(&ocp, 30, 1).is_err());
}

fn toy_constrained_ocp() -> OcpSpec {
    let mut ocp = OcpSpec::new(Arc::new(DoubleIntegrator), 2.0).unwrap();
    ocp.q_diag = DVector::from_vec(vec![1.0, 0.5]);
    ocp.r_diag = DVector::from_vec(vec![0.1]);
    ocp.reference = Reference::Constant(DVector::from_vec(vec![0.8, 0.0]));
    ocp.initial_state = DVector::from_vec(vec![0.1, 0.0]);
    ocp.x_lower = DVector::from_vec(vec![-2.0, -3.0]);
    ocp.x_upper = DVector::from_vec(vec![2.0, 3.0]);
    ocp.u_lower = DVector::from_vec(vec![-5.0]);
    ocp.u_upper = DVector::from_vec(vec![5.0]);
    ocp.constraints.push(BarrierConstraint {
        obstacle: ObstacleEllipse::new(0.5, 0.2, 0.05, 0.0, 0.3, 0.4).unwrap(),
        gains: Some(CbfGains::default()),
        s_index: 0,
        w_index: 1,
    });
    ocp
}

#[test]
fn jacobians_match_finite_differences_on_random_points() {
    let ocp = toy_constrained_ocp();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(51);

    let problems = vec![
        transcribe_resafecol(&ocp, 5, 6, 3).unwrap(),
        transcribe_psc(&ocp, 5, 6).unwrap(),
        transcribe_dms(
            &{
                let mut o = ocp.clone();
                o.constraints[0].gains = None;
                o
            },
            25,
            2,
        )
        .unwrap(),
    ];
    for nlp in &problems {
        for _ in 0..20 {
            let z = DVector::from_fn(nlp.dim(), |_, _| rng.gen_range(-1.0..1.0));
            let eq_err = fd_jacobian_error(nlp.equality.as_ref(), &z, 1e-6);
            assert!(
                eq_err < 1e-5,
                "{}: equality jacobian error {eq_err:.2e}",
                nlp.meta.method
            );
            let in_err = fd_jacobian_error(nlp.inequality.as_ref(), &z, 1e-6);
            assert!(
                in_err < 1e-5,
                "{}: inequality jacobian error {in_err:.2e}",
                nlp.meta.method
            );
            let g_err = fd_gradient_error(&nlp.cost, &z, 1e-6);
            assert!(
                g_err < 1e-5,
                "{}: gradient error {g_err:.2e}",
                nlp.meta.method
            );
        }
    }
}

#[test]
fn defect_residuals_vanish_at_solutions() {
    let ocp = min_energy_ocp();
    let opts = SolveOptions::to_convergence();
    for nlp in [
        transcribe_resafecol(&ocp, 5, 8, 2).unwrap(),
        transcribe_psc(&ocp, 5, 8).unwrap(),
    ] {
        let (z, stats) = sqp_solve(&nlp, None, &opts).unwrap();
        assert!(stats.max_constraint_violation < 1e-6);
        let defects = nlp.equality.eval(&z);
        assert!(
            defects.amax() < 1e-6,
            "{}: defect residual {:.2e}",
            nlp.meta.method,
            defects.amax()
        );
    }
}

#[test]
fn hull_feasibility_implies_node_feasibility() {
    // The hull rows of any region bracket the spline everywhere, so a point
    // feasible for the hull boxes is feasible for the node boxes.
    let mut ocp = min_energy_ocp();
    ocp.x_lower = DVector::from_vec(vec![-1.2, -1.2]);
    ocp.x_upper = DVector::from_vec(vec![1.2, 1.2]);
    ocp.terminal_lower = DVector::from_element(2, f64::NEG_INFINITY);
    ocp.terminal_upper = DVector::from_element(2, f64::INFINITY);
    ocp.constraints.clear();
    let hull_nlp = transcribe_resafecol(&ocp, 4, 6, 3).unwrap();
    let node_nlp = transcribe_psc(&ocp, 4, 6).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut feasible_seen = 0;
    for _ in 0..500 {
        let z = DVector::from_fn(hull_nlp.dim(), |_, _| rng.gen_range(-0.6..0.6));
        let hull_vals = hull_nlp.inequality.eval(&z);
        let hull_ok = (0..hull_vals.len()).all(|i| {
            hull_vals[i] >= hull_nlp.inequality.lower()[i] - 1e-12
                && hull_vals[i] <= hull_nlp.inequality.upper()[i] + 1e-12
        });
        if !hull_ok {
            continue;
        }
        feasible_seen += 1;
        let node_z = z.rows(0, node_nlp.dim()).into_owned();
        let node_vals = node_nlp.inequality.eval(&node_z);
        for i in 0..node_vals.len() {
            assert!(
                node_vals[i] >= node_nlp.inequality.lower()[i] - 1e-9
                    && node_vals[i] <= node_nlp.inequality.upper()[i] + 1e-9,
                "node row {i} violated while hulls feasible"
            );
        }
    }
    assert!(feasible_seen > 20, "only {feasible_seen} feasible samples");
}

/// The node-only transcription tracks a reference above the path bound and
/// pins the bound exactly at the nodes; the spline bulges over the bound
/// between them. The hull transcription caps the true maximum.
#[test]
fn internode_violation_witness() {
    let mut ocp = OcpSpec::new(Arc::new(SingleIntegrator), 2.0).unwrap();
    ocp.q_diag = DVector::from_vec(vec![10.0]);
    ocp.r_diag = DVector::from_vec(vec![1e-3]);
    ocp.reference = Reference::Constant(DVector::from_vec(vec![1.5]));
    ocp.initial_state = DVector::from_vec(vec![0.0]);
    ocp.x_upper = DVector::from_vec(vec![1.0]);

    let opts = SolveOptions::to_convergence();
    let degree = 5;
    let nodes = 6;

    let psc = transcribe_psc(&ocp, degree, nodes).unwrap();
    let (z_psc, stats_psc) = sqp_solve(&psc, None, &opts).unwrap();
    assert!(stats_psc.max_constraint_violation < 1e-6);

    let trans = ResafecolTranscriber::new(1, 1, 2.0, degree, nodes, 3).unwrap();
    let hull_nlp = trans.transcribe(&ocp).unwrap();
    let (z_hull, stats_hull) = sqp_solve(&hull_nlp, None, &opts).unwrap();
    assert!(stats_hull.max_constraint_violation < 1e-6);

    let ctx = trans.context();
    let dense_max = |z: &DVector<f64>| {
        let coeffs = ctx.coefficients(z);
        let mut max = f64::NEG_INFINITY;
        for i in 0..=2000 {
            let tau = -1.0 + 2.0 * i as f64 / 2000.0;
            max = max.max(eval_spline(&coeffs, &ctx.basis, tau, 0).unwrap()[0]);
        }
        max
    };
    let psc_violation = dense_max(&z_psc.rows(0, ctx.primal_dim()).into_owned()) - 1.0;
    assert!(
        psc_violation > 1e-2,
        "expected an inter-node violation, got {psc_violation:.3e}"
    );
    let hull_violation = dense_max(&z_hull) - 1.0;
    assert!(
        hull_violation <= 1e-6,
        "hull solution violates the bound by {hull_violation:.3e}"
    );
}

#[test]
fn warm_start_shift_reduces_initial_violation() {
    // Shifting the previous solution should roughly satisfy the defects of
    // the shifted problem away from the new initial condition.
    let ocp = min_energy_ocp();
    let trans = ResafecolTranscriber::new(2, 1, 2.0, 5, 8, 2).unwrap();
    let nlp = trans.transcribe(&ocp).unwrap();
    let (z, _) = sqp_solve(&nlp, None, &SolveOptions::to_convergence()).unwrap();
    let shifted = trans.shift_initial_guess(&z, 0.1).unwrap();
    // The shifted spline still satisfies the dynamics (it is the same
    // trajectory re-indexed), so defect rows beyond the initial condition
    // stay small.
    let defects = nlp.equality.eval(&shifted);
    let tail = defects.rows(2, defects.len() - 2).amax();
    assert!(tail < 1e-5, "shifted defect residual {tail:.2e}");
}
