use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use super::export::trajectory_table;
use super::{Check, ExperimentConfig, ExperimentError, Table};
use crate::batch::{batch_solve, mpc_run, perturb_initial_state, summarize, BatchEntry, BatchJob};
use crate::dense::norm2;
use crate::models::mars::{self, build_mars_problem, mars_nominal, mars_trust_radii, MarsParams};
use crate::models::quadrotor::{build_quadrotor_problem, quadrotor_nominal, quadrotor_trust_radii, random_scene, QuadrotorTask, POS};
use crate::models::{check_success, SuccessReport};
use crate::ocp::Trajectory;
use crate::scp::{scp_solve, ScpConfig, SolveReport, TrustRadii};

type Outcome = (serde_json::Value, Vec<Check>, Vec<Table>);

/// Independent stream per batch entry, so an entry's data does not depend
/// on the batch size.
fn entry_rng(seed: u64, entry: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(entry as u64);
    rng
}

fn sci(v: f64) -> String {
    format!("{v:e}")
}

fn quad_radii(task: &QuadrotorTask) -> TrustRadii {
    let (state, control) = quadrotor_trust_radii(task);
    TrustRadii { state, control }
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    /// `rhof_<ρ_f>` or `inner_<count>`.
    pub label: String,
    pub rho_final: f64,
    pub inner_iterations: usize,
    pub report: SolveReport,
}

/// The `ρ_f` axis at the baseline inner count, then the inner-iteration axis
/// at the baseline `ρ_f`.
pub fn ablation_runs(config: &ExperimentConfig) -> Result<Vec<AblationRun>, ExperimentError> {
    let a = &config.ablation;
    let problem = build_quadrotor_problem(&a.task)?;
    let guess = quadrotor_nominal(&problem, &a.task.params);
    let radii = quad_radii(&a.task);
    let mut grid: Vec<(String, f64, usize)> =
        a.rho_finals.iter().map(|&r| (format!("rhof_{}", sci(r)), r, a.baseline_inner)).collect();
    grid.extend(a.inner_iterations.iter().map(|&n| (format!("inner_{n}"), a.baseline_rho_final, n)));
    grid.into_iter()
        .map(|(label, rho_final, inner)| {
            let scp = ScpConfig { rhof: rho_final, inner_iterations: inner, ..config.scp.clone() };
            let report = scp_solve(&problem, Some(&guess), &radii, &scp)?;
            Ok(AblationRun { label, rho_final, inner_iterations: inner, report })
        })
        .collect()
}

fn history_table(run: &AblationRun) -> Table {
    let mut t = Table::new(
        format!("history_{}", run.label),
        &["outer", "rho_eq", "rho_dyn", "rho_geo", "cost", "defect", "inner_iterations", "primal_residual", "dual_residual"],
    );
    for r in &run.report.history {
        t.push(vec![
            r.iteration.to_string(),
            r.rho.rho_eq.to_string(),
            r.rho.rho_dyn.to_string(),
            r.rho.rho_geo.to_string(),
            r.cost.to_string(),
            r.defect.to_string(),
            r.inner_iterations.to_string(),
            r.residuals.primal.to_string(),
            r.residuals.dual.to_string(),
        ]);
    }
    t
}

pub(super) fn ablation(config: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let runs = ablation_runs(config)?;
    let tol = config.scp.defect_tolerance;
    let mut tables: Vec<Table> = runs.iter().map(history_table).collect();
    let mut overview = Table::new("ablation", &["label", "rho_final", "inner_iterations", "final_cost", "final_defect", "converged"]);
    for r in &runs {
        overview.push(vec![
            r.label.clone(),
            r.rho_final.to_string(),
            r.inner_iterations.to_string(),
            r.report.final_cost.to_string(),
            r.report.final_defect.to_string(),
            (r.report.final_defect < tol).to_string(),
        ]);
    }
    tables.push(overview);

    let a = &config.ablation;
    let rho_axis = &runs[..a.rho_finals.len()];
    let inner_axis = &runs[a.rho_finals.len()..];
    let mut checks = vec![Check::new(
        "rho_final_runs_reach_defect_tolerance",
        rho_axis.iter().all(|r| r.report.final_defect < tol),
        rho_axis.iter().map(|r| format!("{}={:.2e}", r.label, r.report.final_defect)).collect::<Vec<_>>().join(" "),
    )];
    let by_rho = |v: f64| rho_axis.iter().find(|r| r.rho_final == v);
    let lowest = a.rho_finals.iter().copied().fold(f64::INFINITY, f64::min);
    let highest = a.rho_finals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if let (Some(lo), Some(hi)) = (by_rho(lowest), by_rho(highest)) {
        checks.push(Check::new(
            "low_rho_final_cost_not_above_high",
            lo.report.final_cost <= hi.report.final_cost,
            format!("cost({})={:.4} cost({})={:.4}", lo.label, lo.report.final_cost, hi.label, hi.report.final_cost),
        ));
    }
    let fewest = inner_axis.iter().min_by_key(|r| r.inner_iterations);
    let most = inner_axis.iter().max_by_key(|r| r.inner_iterations);
    if let (Some(f), Some(m)) = (fewest, most) {
        checks.push(Check::new(
            "inner_extremes_converge_and_more_is_not_worse",
            f.report.final_defect < tol && m.report.final_defect < tol && m.report.final_defect <= f.report.final_defect,
            format!("defect({})={:.2e} defect({})={:.2e}", f.label, f.report.final_defect, m.label, m.report.final_defect),
        ));
    }
    let metrics = json!({
        "runs": runs.iter().map(|r| json!({
            "label": r.label,
            "rho_final": r.rho_final,
            "inner_iterations": r.inner_iterations,
            "final_cost": r.report.final_cost,
            "final_defect": r.report.final_defect,
            "outer_iterations": r.report.outer_iterations,
        })).collect::<Vec<_>>(),
    });
    Ok((metrics, checks, tables))
}

/// Randomized sphere scenes and jittered straight-line nominals.
pub fn bench_entries(config: &ExperimentConfig) -> Result<Vec<BatchEntry>, ExperimentError> {
    let b = &config.bench;
    let jitter = Normal::new(0.0, b.nominal_noise).map_err(|e| ExperimentError::config("bench.nominal_noise", e.to_string()))?;
    (0..config.batch)
        .map(|i| {
            let mut rng = entry_rng(config.seed, i);
            let mut task = QuadrotorTask {
                start: b.start,
                goal: b.goal,
                horizon: b.horizon,
                duration: b.duration,
                obstacles: Vec::new(),
                ..QuadrotorTask::ablation()
            };
            task.obstacles = random_scene(&mut rng, b.start, b.goal, b.obstacles, b.radius_range, b.clearance);
            let problem = build_quadrotor_problem(&task)?;
            let mut guess = quadrotor_nominal(&problem, &task.params);
            let n = guess.states.len();
            for x in &mut guess.states[1..n - 1] {
                for v in &mut x[POS] {
                    *v += jitter.sample(&mut rng);
                }
            }
            Ok(BatchEntry { problem, guess, radii: quad_radii(&task) })
        })
        .collect()
}

fn judge(entries: &[BatchEntry], reports: &[Result<SolveReport, crate::scp::ScpError>], config: &ExperimentConfig) -> Vec<Option<SuccessReport>> {
    entries
        .iter()
        .zip(reports)
        .map(|(e, r)| r.as_ref().ok().and_then(|r| check_success(&e.problem, &r.trajectory, &config.thresholds).ok()))
        .collect()
}

fn outcome_row(i: usize, check: &Option<SuccessReport>, report: &Result<SolveReport, crate::scp::ScpError>) -> Vec<String> {
    let f = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    vec![
        i.to_string(),
        check.is_some_and(|c| c.success).to_string(),
        f(check.map(|c| c.defect)),
        f(check.map(|c| c.penetration)),
        f(check.map(|c| c.boundary_error)),
        f(report.as_ref().ok().map(|r| r.final_cost)),
        report.as_ref().map_or_else(|_| String::new(), |r| r.outer_iterations.to_string()),
        report.as_ref().err().map_or_else(String::new, |e| e.to_string()),
    ]
}

const OUTCOME_HEADER: [&str; 8] = ["entry", "success", "defect", "penetration", "boundary_error", "cost", "outer_iterations", "error"];

pub(super) fn quad_bench(config: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let entries = bench_entries(config)?;
    let job = BatchJob { entries, config: config.scp.clone(), seed: config.seed, parallelism_width: 0 };
    let result = batch_solve(&job);
    let checks_per = judge(&job.entries, &result.reports, config);
    let success: Vec<bool> = checks_per.iter().map(|c| c.is_some_and(|c| c.success)).collect();
    let defect: Vec<f64> = checks_per.iter().map(|c| c.map_or(f64::NAN, |c| c.defect)).collect();
    let cost: Vec<f64> = result.reports.iter().map(|r| r.as_ref().map_or(f64::NAN, |r| r.final_cost)).collect();
    let summary = summarize(&result, &success, &defect, &cost);

    let mut table = Table::new("outcomes", &OUTCOME_HEADER);
    for (i, (c, r)) in checks_per.iter().zip(&result.reports).enumerate() {
        table.push(outcome_row(i, c, r));
    }
    let b = &config.bench;
    let checks = vec![
        Check::new(
            "success_rate",
            summary.success_rate >= b.min_success_rate,
            format!("{}/{} ({:.1}%)", summary.successes, summary.batch_size, 100.0 * summary.success_rate),
        ),
        Check::new("mean_defect", summary.mean_defect <= b.max_mean_defect, format!("{:.3e}", summary.mean_defect)),
    ];
    Ok((serde_json::to_value(&summary)?, checks, vec![table]))
}

/// Dispersed initial states around the nominal descent.
pub fn mars_entries(config: &ExperimentConfig) -> Result<Vec<BatchEntry>, ExperimentError> {
    let p = &config.mars.params;
    let (state, control) = mars_trust_radii(p);
    let radii = TrustRadii { state, control };
    (0..config.batch)
        .map(|i| {
            let mut rng = entry_rng(config.seed, i);
            let x0 = perturb_initial_state(&p.nominal_initial_state(), config.mars.dispersion, &mut rng, Some(mars::QUAT));
            let problem = build_mars_problem(&x0, p)?;
            let guess = mars_nominal(&problem, p);
            Ok(BatchEntry { problem, guess, radii: radii.clone() })
        })
        .collect()
}

/// Worst excursion of mass and thrust magnitude past their bounds.
pub fn mars_bound_violation(traj: &Trajectory, p: &MarsParams) -> f64 {
    let mass = traj.states.iter().map(|x| (p.mass_dry - x[mars::MASS]).max(x[mars::MASS] - p.mass_wet));
    let thrust = traj.controls.iter().map(|u| {
        let t = norm2(u);
        (p.thrust_min - t).max(t - p.thrust_max)
    });
    mass.chain(thrust).fold(0.0, f64::max)
}

pub(super) fn mars_batch(config: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let p = &config.mars.params;
    let entries = mars_entries(config)?;
    let job = BatchJob { entries, config: config.scp.clone(), seed: config.seed, parallelism_width: 0 };
    let result = batch_solve(&job);
    let checks_per = judge(&job.entries, &result.reports, config);
    let success: Vec<bool> = checks_per.iter().map(|c| c.is_some_and(|c| c.success)).collect();
    let defect: Vec<f64> = checks_per.iter().map(|c| c.map_or(f64::NAN, |c| c.defect)).collect();
    let cost: Vec<f64> = result.reports.iter().map(|r| r.as_ref().map_or(f64::NAN, |r| r.final_cost)).collect();
    let summary = summarize(&result, &success, &defect, &cost);

    let mut header: Vec<&str> = OUTCOME_HEADER.to_vec();
    header.extend(["initial_mass", "final_mass", "fuel_used", "bound_violation"]);
    let mut outcomes = Table::new("outcomes", &header);
    let mut thrust = Table::new("thrust", &["entry", "node", "time", "thrust_norm", "thrust_x", "thrust_y", "thrust_z", "mass"]);
    let mut worst_bound = 0.0_f64;
    let dt = p.dt();
    for (i, (c, r)) in checks_per.iter().zip(&result.reports).enumerate() {
        let mut row = outcome_row(i, c, r);
        match r {
            Ok(r) => {
                let t = &r.trajectory;
                let v = mars_bound_violation(t, p);
                if success[i] {
                    worst_bound = worst_bound.max(v);
                }
                row.extend([
                    t.states[0][mars::MASS].to_string(),
                    t.states[t.states.len() - 1][mars::MASS].to_string(),
                    (t.states[0][mars::MASS] - t.states[t.states.len() - 1][mars::MASS]).to_string(),
                    v.to_string(),
                ]);
                for (k, u) in t.controls.iter().enumerate() {
                    thrust.push(vec![
                        i.to_string(),
                        k.to_string(),
                        (k as f64 * dt).to_string(),
                        norm2(u).to_string(),
                        u[0].to_string(),
                        u[1].to_string(),
                        u[2].to_string(),
                        t.states[k][mars::MASS].to_string(),
                    ]);
                }
            }
            Err(_) => row.extend(std::iter::repeat_n(String::new(), 4)),
        }
        outcomes.push(row);
    }
    let m = &config.mars;
    let checks = vec![
        Check::new(
            "success_rate",
            summary.success_rate >= m.min_success_rate,
            format!("{}/{} ({:.1}%)", summary.successes, summary.batch_size, 100.0 * summary.success_rate),
        ),
        Check::new("mass_and_thrust_bounds", worst_bound <= m.bound_tolerance, format!("worst excursion {worst_bound:.3e}")),
    ];
    let mut metrics = serde_json::to_value(&summary)?;
    metrics["worst_bound_violation"] = json!(worst_bound);
    Ok((metrics, checks, vec![outcomes, thrust]))
}

pub(super) fn robust_mpc(config: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let mpc = crate::batch::MpcConfig { seed: config.seed, ..config.mpc.clone() };
    let log = mpc_run(&mpc)?;
    let buffered = mpc.obstacle.inflated(mpc.buffer);
    let clearance = log.min_tube_clearance(&buffered);
    let dispersion = log.max_u0_dispersion();
    let any_failed = log.steps.iter().any(|s| s.plan_failed);

    let mut steps = Table::new(
        "mpc_steps",
        &[
            "step", "time", "px", "py", "pz", "thrust", "tau_x", "tau_y", "tau_z", "distance", "plan_seconds", "wind_x", "wind_y",
            "wind_z", "estimate_x", "estimate_y", "estimate_z", "plan_failed", "u0_dispersion", "consensus_gap", "max_defect",
        ],
    );
    let mut tube = Table::new("mpc_tube", &["step", "node", "mean_x", "mean_y", "mean_z", "radius_x", "radius_y", "radius_z"]);
    let mut fans = Table::new("mpc_fans", &["step", "scenario", "node", "x", "y", "z"]);
    for s in &log.steps {
        let mut row = vec![s.step.to_string(), (s.step as f64 * mpc.dt).to_string()];
        row.extend(s.state[POS].iter().map(f64::to_string));
        row.extend(s.control.iter().map(f64::to_string));
        row.extend([s.distance.to_string(), s.plan_seconds.to_string()]);
        row.extend(s.wind.iter().map(f64::to_string));
        row.extend(s.estimate.iter().map(f64::to_string));
        row.extend([s.plan_failed.to_string(), s.u0_dispersion.to_string(), s.consensus_gap.to_string(), s.max_defect.to_string()]);
        steps.push(row);
        for (k, (m, r)) in s.tube_mean.iter().zip(&s.tube_radius).enumerate() {
            let mut row = vec![s.step.to_string(), k.to_string()];
            row.extend(m.iter().chain(r).map(f64::to_string));
            tube.push(row);
        }
        for (j, fan) in s.fans.iter().enumerate() {
            for (k, p) in fan.iter().enumerate() {
                let mut row = vec![s.step.to_string(), j.to_string(), k.to_string()];
                row.extend(p.iter().map(f64::to_string));
                fans.push(row);
            }
        }
    }
    let c = &config.mpc_criteria;
    let checks = vec![
        Check::new(
            "capture",
            log.captured_at.is_some_and(|k| k <= c.capture_within),
            format!("captured_at={:?} final_distance={:.3}", log.captured_at, log.final_distance),
        ),
        Check::new("u0_dispersion", dispersion < c.max_u0_dispersion, format!("max {dispersion:.3e}")),
        Check::new("tube_clear_of_buffered_obstacle", clearance >= 0.0 && !any_failed, format!("min clearance {clearance:.3} m, plan failures {any_failed}")),
    ];
    let plan_times: Vec<f64> = log.steps.iter().map(|s| s.plan_seconds).collect();
    let metrics = json!({
        "captured_at": log.captured_at,
        "final_distance": log.final_distance,
        "max_u0_dispersion": dispersion,
        "min_tube_clearance": clearance,
        "steps": log.steps.len(),
        "mean_plan_seconds": plan_times.iter().sum::<f64>() / plan_times.len().max(1) as f64,
        "scenarios": mpc.scenarios,
        "wind_noise_std": mpc.wind.noise_std,
    });
    Ok((metrics, checks, vec![steps, tube, fans]))
}

pub(super) fn custom(config: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let (problem, guess, radii) = match &config.custom {
        super::CustomProblem::Quadrotor { task } => {
            let problem = build_quadrotor_problem(task)?;
            let guess = quadrotor_nominal(&problem, &task.params);
            (problem, guess, quad_radii(task))
        }
        super::CustomProblem::Mars { params } => {
            let problem = build_mars_problem(&params.nominal_initial_state(), params)?;
            let guess = mars_nominal(&problem, params);
            let (state, control) = mars_trust_radii(params);
            (problem, guess, TrustRadii { state, control })
        }
    };
    let report = scp_solve(&problem, Some(&guess), &radii, &config.scp)?;
    let check = check_success(&problem, &report.trajectory, &config.thresholds)?;
    let run = AblationRun { label: "solve".into(), rho_final: config.scp.rhof, inner_iterations: config.scp.inner_iterations, report };
    let mut history = history_table(&run);
    history.name = "history".into();
    let tables = vec![trajectory_table("trajectory", &run.report.trajectory, problem.dt), history];
    let checks = vec![
        Check::new("defect", check.defect_ok, format!("{:.3e}", check.defect)),
        Check::new("penetration", check.penetration_ok, format!("{:.3e}", check.penetration)),
        Check::new("boundary", check.boundary_ok, format!("{:.3e}", check.boundary_error)),
    ];
    let metrics = json!({
        "final_cost": run.report.final_cost,
        "final_defect": run.report.final_defect,
        "outer_iterations": run.report.outer_iterations,
        "termination": run.report.termination,
        "success": check,
    });
    Ok((metrics, checks, tables))
}
