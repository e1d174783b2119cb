use resafecol::sim::*;
use resafecol::vehicle::PathModel;
use std::sync::Arc;

fn main() {
    let mut scenario = Scenario::new("tracking", Arc::new(PathModel::straight(600.0, 3.5).unwrap()));
    scenario.duration = 2.0;
    scenario.target_speed = 20.0;
    scenario.initial_state.v_x = 15.0;
    let log = run_closed_loop(&scenario).unwrap();
    println!("failures: {}", log.solver_failures());
    for r in log.records.iter().take(10) {
        println!(
            "t={:.2} vx={:.3} tr={:.4} input=({:+.4},{:+.4}) conv={} iters={} qp={} viol={:.2e} cost={:.3}",
            r.time, r.state.v_x, r.state.t_r, r.input[0], r.input[1],
            r.stats.converged, r.stats.iterations, r.stats.qp_iterations,
            r.stats.max_constraint_violation, r.stats.cost
        );
    }
}
