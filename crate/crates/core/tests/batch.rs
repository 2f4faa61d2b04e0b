use consensus_scp::batch::mpc::tube_statistics;
use consensus_scp::batch::*;
use consensus_scp::models::mars::{self, MarsParams};
use consensus_scp::models::quadrotor::{
    build_quadrotor_problem, quadrotor_nominal, quadrotor_trust_radii, random_scene, Obstacle, QuadrotorTask,
};
use consensus_scp::scp::{scp_solve, ScpConfig, SolveReport, TrustRadii};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_batch(count: usize, seed: u64) -> BatchJob {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..count)
        .map(|_| {
            let task = QuadrotorTask {
                horizon: 30,
                obstacles: random_scene(&mut rng, [-5.0, -5.0, 2.0], [5.0, 5.0, 2.0], 2, (1.0, 1.5), 0.5),
                ..QuadrotorTask::ablation()
            };
            let problem = build_quadrotor_problem(&task).unwrap();
            let (s, c) = quadrotor_trust_radii(&task);
            BatchEntry { guess: quadrotor_nominal(&problem, &task.params), problem, radii: TrustRadii { state: s, control: c } }
        })
        .collect();
    BatchJob { entries, config: ScpConfig { max_outer: 6, ..ScpConfig::default() }, seed, parallelism_width: 0 }
}

fn numbers(r: &Result<SolveReport, consensus_scp::scp::ScpError>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, f64, f64) {
    let r = r.as_ref().expect("solve");
    (r.trajectory.states.clone(), r.trajectory.controls.clone(), r.final_cost, r.final_defect)
}

#[test]
fn single_entry_batch_is_a_plain_solve() {
    let job = small_batch(1, 3);
    let e = &job.entries[0];
    let direct = scp_solve(&e.problem, Some(&e.guess), &e.radii, &job.config).unwrap();
    let batched = batch_solve(&job);
    assert_eq!(batched.reports[0].as_ref().unwrap().trajectory, direct.trajectory);
    assert_eq!(batched.reports[0].as_ref().unwrap().history, direct.history);
}

#[test]
fn worker_count_never_changes_results() {
    let job = small_batch(6, 9);
    let sequential: Vec<_> = batch_solve_sequential(&job).reports.iter().map(numbers).collect();
    for width in [1, 2, 3] {
        let parallel = batch_solve(&BatchJob { parallelism_width: width, ..job.clone() });
        let got: Vec<_> = parallel.reports.iter().map(numbers).collect();
        assert_eq!(got, sequential, "width {width}");
    }
    // an entry's result does not depend on its neighbours
    let alone = batch_solve(&BatchJob { entries: job.entries[4..5].to_vec(), ..job.clone() });
    assert_eq!(numbers(&alone.reports[0]), sequential[4]);
}

#[test]
fn dispersion_has_the_requested_spread() {
    let p = MarsParams::default();
    let nominal = p.nominal_initial_state();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 4000;
    let samples: Vec<Vec<f64>> =
        (0..n).map(|_| perturb_initial_state(&nominal, 0.05, &mut rng, Some(mars::QUAT))).collect();
    for &k in &[mars::MASS, 1, 2, 4, 5] {
        let ratios: Vec<f64> = samples.iter().map(|x| x[k] / nominal[k]).collect();
        let mean = ratios.iter().sum::<f64>() / n as f64;
        let std = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 0.005, "coordinate {k}: mean {mean}");
        assert!((std - 0.05).abs() < 0.005, "coordinate {k}: std {std}");
    }
    for x in &samples {
        assert!((consensus_scp::models::quat::norm(&x[mars::QUAT]) - 1.0).abs() < 1e-12);
    }
    assert_eq!(perturb_initial_state(&nominal, 0.0, &mut rng, None), nominal);
}

#[test]
fn corridor_wind_averages_to_its_base() {
    let p = WindParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 20_000;
    let mut mean = [0.0; 3];
    for _ in 0..n {
        let a = wind_disturbance(&[0.0, 0.0, 2.0], &mut rng, &p);
        for k in 0..3 {
            mean[k] += a[k] / n as f64;
        }
    }
    for k in 0..3 {
        // standard error 0.5/√n ≈ 3.5e-3
        assert!((mean[k] - p.base[k]).abs() < 0.02, "{mean:?}");
    }
}

#[test]
fn observer_settles_on_a_constant_disturbance() {
    let mut o = ObserverState::new(0.5);
    for _ in 0..60 {
        o = observer_update(&o, &[1.0, 1.5, -2.0], &[0.5, 0.0, -1.0]);
    }
    for (e, want) in o.estimate.iter().zip([0.5, 1.5, -1.0]) {
        assert!((e - want).abs() < 1e-12);
    }
}

#[test]
fn tube_is_mean_plus_two_sigma() {
    let fans = vec![vec![[0.0, 1.0, 2.0]], vec![[2.0, 1.0, 4.0]]];
    let (mean, radius) = tube_statistics(&fans);
    assert_eq!(mean, vec![[1.0, 1.0, 3.0]]);
    assert_eq!(radius, vec![[2.0, 0.0, 2.0]]);
}

#[test]
fn wider_scenario_set_has_the_wider_tube() {
    let config = MpcConfig { max_steps: 1, ..MpcConfig::default() };
    let log = mpc_run(&config).unwrap();
    let step = &log.steps[0];
    assert!(!step.plan_failed);
    assert!(step.u0_dispersion < 1e-6, "{}", step.u0_dispersion);
    // the first scenarios carry the smallest noise multipliers
    let (_, low) = tube_statistics(&step.fans[..5]);
    for (all, sub) in step.tube_radius.iter().zip(&low) {
        for k in 0..3 {
            assert!(all[k] + 1e-9 >= sub[k], "{all:?} vs {sub:?}");
        }
    }
}

#[test]
fn calm_air_without_obstacle_arrives_sooner() {
    let base = MpcConfig { scenarios: 3, max_steps: 80, ..MpcConfig::default() };
    let calm = MpcConfig {
        obstacle: Obstacle::cylinder([40.0, -40.0], 1.0),
        wind: WindParams { base: [0.0; 3], noise_std: 0.0, ..WindParams::default() },
        ..base.clone()
    };
    let calm_log = mpc_run(&calm).unwrap();
    let windy_log = mpc_run(&base).unwrap();
    let calm_at = calm_log.captured_at.expect("calm run captured");
    let windy_at = windy_log.captured_at.unwrap_or(usize::MAX);
    assert!(calm_at < windy_at, "{calm_at} vs {windy_at}");
}
