//! Quadrotor past three spheres: SCP from a straight-line guess, then the
//! success check on the nonlinear rollout.

use consensus_scp::models::quadrotor::{build_quadrotor_problem, quadrotor_nominal, quadrotor_trust_radii, QuadrotorTask};
use consensus_scp::models::{check_success, SuccessThresholds};
use consensus_scp::scp::{scp_solve, ScpConfig, TrustRadii};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let task = QuadrotorTask::ablation();
    let problem = build_quadrotor_problem(&task)?;
    let guess = quadrotor_nominal(&problem, &task.params);
    let (state, control) = quadrotor_trust_radii(&task);
    let report = scp_solve(&problem, Some(&guess), &TrustRadii { state, control }, &ScpConfig::default())?;

    println!("outer  rho        cost       defect");
    for r in &report.history {
        println!("{:>5}  {:<9.3e}  {:<9.4}  {:.3e}", r.iteration, r.rho.rho_geo, r.cost, r.defect);
    }
    let check = check_success(&problem, &report.trajectory, &SuccessThresholds::default())?;
    println!(
        "terminated {:?}: defect {:.2e}, penetration {:.2e} m, boundary error {:.2e}, success {}",
        report.termination, check.defect, check.penetration, check.boundary_error, check.success
    );
    Ok(())
}
