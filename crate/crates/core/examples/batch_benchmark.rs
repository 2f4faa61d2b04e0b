//! Independent solves over random obstacle scenes, spread over the worker
//! pool. Results do not depend on the number of workers.

use consensus_scp::experiment::{bench_entries, ExperimentConfig};
use consensus_scp::batch::{batch_solve, BatchJob};
use consensus_scp::models::{check_success, SuccessThresholds};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ExperimentConfig { batch: 8, seed: 42, ..ExperimentConfig::default() };
    let job = BatchJob { entries: bench_entries(&config)?, config: config.scp.clone(), seed: config.seed, parallelism_width: 0 };
    let result = batch_solve(&job);
    let mut successes = 0;
    for (k, (entry, report)) in job.entries.iter().zip(&result.reports).enumerate() {
        match report {
            Ok(r) => {
                let check = check_success(&entry.problem, &r.trajectory, &SuccessThresholds::default())?;
                successes += check.success as usize;
                println!("scene {k}: defect {:.2e}  penetration {:.2e}  success {}", check.defect, check.penetration, check.success);
            }
            Err(e) => println!("scene {k}: {e}"),
        }
    }
    println!("{successes}/{} in {:.2} s ({:.2} solves/s)", job.entries.len(), result.wall_time.as_secs_f64(), result.throughput());
    Ok(())
}
