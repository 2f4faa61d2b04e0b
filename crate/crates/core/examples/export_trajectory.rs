//! Solves the default Mars landing and writes the trajectory as CSV and JSON.

use consensus_scp::experiment::{export_trajectory, import_trajectory_json, ExportFormat};
use consensus_scp::models::mars::{build_mars_problem, mars_nominal, mars_trust_radii, MarsParams};
use consensus_scp::scp::{scp_solve, ScpConfig, TrustRadii};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = MarsParams::default();
    let problem = build_mars_problem(&params.nominal_initial_state(), &params)?;
    let (state, control) = mars_trust_radii(&params);
    let report = scp_solve(&problem, Some(&mars_nominal(&problem, &params)), &TrustRadii { state, control }, &ScpConfig::default())?;

    let dir = std::env::temp_dir().join("cscp-export");
    std::fs::create_dir_all(&dir)?;
    export_trajectory(&report.trajectory, params.dt(), ExportFormat::Csv, &dir.join("landing.csv"))?;
    export_trajectory(&report.trajectory, params.dt(), ExportFormat::Json, &dir.join("landing.json"))?;
    let (back, dt) = import_trajectory_json(&dir.join("landing.json"))?;
    assert_eq!(back, report.trajectory);
    println!("wrote {} nodes at dt {dt} to {}", back.states.len(), dir.display());
    Ok(())
}
