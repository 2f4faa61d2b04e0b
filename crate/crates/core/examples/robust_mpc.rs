//! Receding-horizon flight through a gusty corridor past a buffered
//! cylinder, replanning over a scenario fan at every step.

use consensus_scp::batch::{mpc_run, MpcConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(60);
    let config = MpcConfig { max_steps: steps, ..MpcConfig::default() };
    let log = mpc_run(&config)?;
    for s in log.steps.iter().step_by(5) {
        println!(
            "step {:>3}: distance {:.3}  wind [{:+.2}, {:+.2}, {:+.2}]  u0 dispersion {:.1e}  plan {:.2} s",
            s.step, s.distance, s.wind[0], s.wind[1], s.wind[2], s.u0_dispersion, s.plan_seconds
        );
    }
    let obstacle = config.obstacle.inflated(config.buffer);
    println!("captured at {:?}, min tube clearance {:.3} m", log.captured_at, log.min_tube_clearance(&obstacle));
    Ok(())
}
