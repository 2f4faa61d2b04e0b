//! Several disturbed copies of one plan solved in lockstep with a shared
//! first control.

use consensus_scp::batch::{scenario_solve, ScenarioBundle};
use consensus_scp::models::quadrotor::{build_quadrotor_problem, quadrotor_nominal, quadrotor_trust_radii, Obstacle, QuadrotorTask};
use consensus_scp::scp::{ScpConfig, TrustRadii};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let task = QuadrotorTask { horizon: 30, obstacles: vec![Obstacle::sphere([0.0, 0.0, 2.0], 1.5)], ..QuadrotorTask::ablation() };
    let base = build_quadrotor_problem(&task)?;
    let guess = quadrotor_nominal(&base, &task.params);
    let (state, control) = quadrotor_trust_radii(&task);
    // steady crosswinds of increasing strength
    let disturbances: Vec<Vec<[f64; 3]>> = (0..4).map(|k| vec![[0.0, 0.4 * k as f64, 0.0]; task.horizon]).collect();
    let bundle = ScenarioBundle {
        base,
        guesses: vec![guess; disturbances.len()],
        disturbances,
        radii: TrustRadii { state, control },
        coupling_scale: 1.0,
        warm: None,
        polish_iterations: 2000,
        polish_coupling_scale: 1e4,
        consensus_tol: 1e-7,
    };
    let solution = scenario_solve(&bundle, &ScpConfig { max_outer: 10, ..ScpConfig::default() })?;
    println!("shared u0 {:?}", solution.shared_u0);
    println!("u0 dispersion {:.2e}, consensus gap {:.2e}", solution.u0_dispersion, solution.u0_consensus_gap);
    for (k, (t, d)) in solution.trajectories.iter().zip(&solution.defects).enumerate() {
        let end = t.states.last().unwrap();
        println!("scenario {k}: defect {d:.2e}, end position [{:.2}, {:.2}, {:.2}]", end[0], end[1], end[2]);
    }
    Ok(())
}
