//! Minimum-fuel powered descent with glide-slope and thrust-annulus sets.

use consensus_scp::dense::norm2;
use consensus_scp::models::mars::{self, build_mars_problem, fuel_used, mars_nominal, mars_trust_radii, MarsParams};
use consensus_scp::scp::{scp_solve, ScpConfig, TrustRadii};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = MarsParams::default();
    let problem = build_mars_problem(&params.nominal_initial_state(), &params)?;
    let guess = mars_nominal(&problem, &params);
    let (state, control) = mars_trust_radii(&params);
    let report = scp_solve(&problem, Some(&guess), &TrustRadii { state, control }, &ScpConfig::default())?;

    let traj = &report.trajectory;
    println!("{} outer iterations, defect {:.2e}, fuel {:.4}", report.outer_iterations, report.final_defect, fuel_used(traj, &params));
    for (i, u) in traj.controls.iter().enumerate().step_by(5) {
        let x = &traj.states[i];
        println!("node {i:>2}: mass {:.4}  altitude {:>7.4}  thrust {:.4}", x[mars::MASS], x[mars::POS.start], norm2(u));
    }
    Ok(())
}
