//! Many independent solves at once, scenario-coupled solves, and the
//! closed-loop robust MPC simulation.

pub mod mpc;
pub mod scenario;

use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ocp::{OcpProblem, Trajectory};
use crate::scp::{scp_solve, ScpConfig, ScpError, SolveReport, TrustRadii};

pub use mpc::{mpc_run, observer_update, wind_disturbance, MpcConfig, MpcLog, MpcStep, ObserverState, WindParams};
pub use scenario::{scenario_solve, ScenarioBundle, ScenarioSolution};

/// One problem of a batch with its starting nominal and trust region.
#[derive(Debug, Clone)]
pub struct BatchEntry {
    pub problem: OcpProblem,
    pub guess: Trajectory,
    pub radii: TrustRadii,
}

#[derive(Debug, Clone)]
pub struct BatchJob {
    pub entries: Vec<BatchEntry>,
    pub config: ScpConfig,
    /// Seed the entries were generated from; carried into reports.
    pub seed: u64,
    /// Worker count; 0 uses the global pool.
    pub parallelism_width: usize,
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    /// One result per entry, in input order.
    pub reports: Vec<Result<SolveReport, ScpError>>,
    pub wall_time: Duration,
    pub seed: u64,
}

impl BatchResult {
    pub fn throughput(&self) -> f64 {
        self.reports.len() as f64 / self.wall_time.as_secs_f64().max(1e-12)
    }
}

fn solve_entry(e: &BatchEntry, config: &ScpConfig) -> Result<SolveReport, ScpError> {
    scp_solve(&e.problem, Some(&e.guess), &e.radii, config)
}

/// Solves every entry independently; failures stay in their slot.
pub fn batch_solve(job: &BatchJob) -> BatchResult {
    let start = Instant::now();
    let run = || job.entries.par_iter().map(|e| solve_entry(e, &job.config)).collect::<Vec<_>>();
    let reports = if job.parallelism_width == 0 {
        run()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(job.parallelism_width).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        }
    };
    BatchResult { reports, wall_time: start.elapsed(), seed: job.seed }
}

/// Same work on the calling thread, one entry after another.
pub fn batch_solve_sequential(job: &BatchJob) -> BatchResult {
    let start = Instant::now();
    let reports = job.entries.iter().map(|e| solve_entry(e, &job.config)).collect();
    BatchResult { reports, wall_time: start.elapsed(), seed: job.seed }
}

/// Each coordinate scaled by `1 + fraction·η`, `η ~ N(0,1)`; the
/// coordinates in `quaternion` are renormalized afterwards.
pub fn perturb_initial_state(
    nominal: &[f64],
    fraction: f64,
    rng: &mut impl Rng,
    quaternion: Option<std::ops::Range<usize>>,
) -> Vec<f64> {
    let mut x: Vec<f64> = nominal
        .iter()
        .map(|&v| {
            let eta: f64 = rng.sample(StandardNormal);
            v * (1.0 + fraction * eta)
        })
        .collect();
    if fraction == 0.0 {
        return nominal.to_vec();
    }
    if let Some(q) = quaternion {
        crate::models::quat::normalize(&mut x[q]);
    }
    x
}

/// Order-independent batch aggregates. Sums run in entry order after all
/// results are collected, so worker count never changes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub batch_size: usize,
    pub successes: usize,
    pub failures: usize,
    pub errors: usize,
    pub success_rate: f64,
    /// Mean rollout defect over the successful entries.
    pub mean_defect: f64,
    pub mean_cost: f64,
    pub wall_time_s: f64,
    pub throughput: f64,
    pub seed: u64,
}

/// `success[i]` judges entry `i`; `defect[i]`/`cost[i]` are its final values.
pub fn summarize(result: &BatchResult, success: &[bool], defect: &[f64], cost: &[f64]) -> BatchSummary {
    let b = result.reports.len();
    let errors = result.reports.iter().filter(|r| r.is_err()).count();
    let ok: Vec<usize> = (0..b).filter(|&i| success[i]).collect();
    let mean = |v: &[f64]| if ok.is_empty() { f64::NAN } else { ok.iter().map(|&i| v[i]).sum::<f64>() / ok.len() as f64 };
    BatchSummary {
        batch_size: b,
        successes: ok.len(),
        failures: b - ok.len(),
        errors,
        success_rate: ok.len() as f64 / b.max(1) as f64,
        mean_defect: mean(defect),
        mean_cost: mean(cost),
        wall_time_s: result.wall_time.as_secs_f64(),
        throughput: result.throughput(),
        seed: result.seed,
    }
}
