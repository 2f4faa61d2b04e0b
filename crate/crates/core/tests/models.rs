#![allow(clippy::needless_range_loop, clippy::type_complexity)]

mod common;

use std::sync::Arc;

use common::{double_integrator, rng};
use consensus_scp::dense::{norm2, DenseMatrix};
use consensus_scp::models::mars::{self, build_mars_problem, fuel_used, mars_nominal, MarsLander, MarsParams};
use consensus_scp::models::quadrotor::{
    self, build_quadrotor_problem, quadrotor_dynamics, quadrotor_nominal, Obstacle, Quadrotor, QuadrotorParams,
    QuadrotorState, QuadrotorTask,
};
use consensus_scp::models::{check_success, quat, SuccessThresholds};
use consensus_scp::ocp::*;
use consensus_scp::scp::initialize_nominal;
use consensus_scp_oracle::{fine_rollout, richardson_jacobian};
use rand::Rng;

struct Scalar(f64);

impl Dynamics for Scalar {
    fn state_dim(&self) -> usize {
        1
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn derivative(&self, x: &[f64], _u: &[f64], dx: &mut [f64]) {
        dx[0] = self.0 * x[0];
    }
}

fn random_unit_quaternion(r: &mut impl Rng) -> Vec<f64> {
    let mut q: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
    quat::normalize(&mut q);
    q
}

fn random_quadrotor_point(r: &mut impl Rng, p: &QuadrotorParams) -> (Vec<f64>, Vec<f64>) {
    let mut x: Vec<f64> = (0..6).map(|_| r.random_range(-3.0..3.0)).collect();
    x.extend(random_unit_quaternion(r));
    x.extend((0..3).map(|_| r.random_range(-2.0..2.0)));
    let mut u = vec![r.random_range(p.thrust_min..p.thrust_max)];
    u.extend((0..3).map(|_| r.random_range(-p.torque_max..p.torque_max)));
    (x, u)
}

fn random_mars_point(r: &mut impl Rng, p: &MarsParams) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![r.random_range(p.mass_dry..p.mass_wet)];
    x.extend((0..6).map(|_| r.random_range(-2.0..2.0)));
    x.extend(random_unit_quaternion(r));
    x.extend((0..3).map(|_| r.random_range(-0.5..0.5)));
    // include points near both ends of the thrust annulus
    let mag = match r.random_range(0..3) {
        0 => p.thrust_min * 1.001,
        1 => p.thrust_max * 0.999,
        _ => r.random_range(p.thrust_min..p.thrust_max),
    };
    let mut u: Vec<f64> = vec![1.0, r.random_range(-0.15..0.15), r.random_range(-0.15..0.15)];
    let n = norm2(&u);
    u.iter_mut().for_each(|c| *c *= mag / n);
    (x, u)
}

fn check_jacobian(f: &dyn Dynamics, x: &[f64], u: &[f64], dt: f64) {
    let lin = linearize_node(f, x, u, dt).unwrap();
    let nx = x.len();
    let a = richardson_jacobian(|xs| rk4_step(f, xs, u, dt).unwrap(), x, 1e-3);
    let b = richardson_jacobian(|us| rk4_step(f, x, us, dt).unwrap(), u, 1e-3);
    for r in 0..nx {
        for c in 0..nx {
            assert!((lin.a[(r, c)] - a[(r, c)]).abs() < 1e-5, "A[{r},{c}]");
        }
        for c in 0..u.len() {
            assert!((lin.b[(r, c)] - b[(r, c)]).abs() < 1e-5, "B[{r},{c}]");
        }
    }
}

#[test]
fn rk4_examples() {
    assert_eq!(rk4_step(&Scalar(0.0), &[3.5], &[0.0], 0.1).unwrap(), vec![3.5]);
    let h: f64 = 0.1;
    let taylor = 1.0 + h + h * h / 2.0 + h.powi(3) / 6.0 + h.powi(4) / 24.0;
    assert!((rk4_step(&Scalar(1.0), &[1.0], &[0.0], h).unwrap()[0] - taylor).abs() < 1e-15);
    assert!((taylor - 1.105170833).abs() < 1e-9);

    let p = QuadrotorParams::default();
    let x = QuadrotorState::hover_at([1.0, -2.0, 3.0]).to_vec();
    let next = rk4_step(&Quadrotor::new(p.clone()), &x, &p.hover_control(), 0.12).unwrap();
    for k in 0..6 {
        assert!((next[k] - x[k]).abs() < 1e-12);
    }
}

#[test]
fn rk4_rejects_nonfinite_stages() {
    assert!(matches!(rk4_step(&Scalar(1.0), &[f64::NAN], &[0.0], 0.1), Err(OcpError::NonFiniteState { .. })));
}

#[test]
fn quadrotor_field_examples() {
    let p = QuadrotorParams::default();
    let mut dx = vec![0.0; 13];
    let x = QuadrotorState::hover_at([0.0; 3]).to_vec();
    quadrotor_dynamics(&p, &x, &p.hover_control(), &mut dx);
    assert!(dx[3..6].iter().chain(&dx[10..13]).all(|v| v.abs() < 1e-15));
    quadrotor_dynamics(&p, &x, &[0.0; 4], &mut dx);
    assert_eq!(&dx[3..6], &[0.0, 0.0, -9.81]);
    quadrotor_dynamics(&p, &x, &[9.81, 0.0, 0.0, 0.3], &mut dx);
    assert_eq!(&dx[10..13], &[0.0, 0.0, 0.3 / p.inertia[2]]);
}

#[test]
fn jacobians_match_richardson_differences() {
    let qp = QuadrotorParams::default();
    let quad = Quadrotor::new(qp.clone());
    let mp = MarsParams::default();
    let lander = MarsLander { params: mp.clone() };
    let mut r = rng(31);
    for _ in 0..100 {
        let (x, u) = random_quadrotor_point(&mut r, &qp);
        check_jacobian(&quad, &x, &u, 0.12);
        let (x, u) = random_mars_point(&mut r, &mp);
        check_jacobian(&lander, &x, &u, mp.dt());
    }
}

#[test]
fn linearization_error_is_second_order() {
    let p = QuadrotorParams::default();
    let f = Quadrotor::new(p.clone());
    let mut r = rng(4);
    let (x, u) = random_quadrotor_point(&mut r, &p);
    let lin = linearize_node(&f, &x, &u, 0.12).unwrap();
    let dir: Vec<f64> = (0..13).map(|_| r.random_range(-1.0..1.0)).collect();
    let err = |s: f64| {
        let xp: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
        let exact = rk4_step(&f, &xp, &u, 0.12).unwrap();
        norm2(&exact.iter().zip(lin.propagate(&xp, &u)).map(|(a, b)| a - b).collect::<Vec<_>>())
    };
    let (e1, e2) = (err(0.1), err(0.05));
    assert!(e1 / e2 >= 3.5, "{e1} / {e2}");
}

#[test]
fn linearization_residual_closes_the_affine_model() {
    let p = MarsParams::default();
    let f = MarsLander { params: p.clone() };
    let mut r = rng(8);
    let (x, u) = random_mars_point(&mut r, &p);
    let lin = linearize_node(&f, &x, &u, p.dt()).unwrap();
    let exact = rk4_step(&f, &x, &u, p.dt()).unwrap();
    for (a, b) in exact.iter().zip(lin.propagate(&x, &u)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn mars_mass_row_follows_thrust_direction() {
    let p = MarsParams::default();
    let f = MarsLander { params: p.clone() };
    let x = p.nominal_initial_state();
    let u = [1.8, 0.2, -0.1];
    let lin = linearize_node(&f, &x, &u, p.dt()).unwrap();
    let n = norm2(&u);
    for k in 0..3 {
        let want = -p.alpha * p.dt() * u[k] / n;
        assert!((lin.b[(mars::MASS, k)] - want).abs() < 1e-8);
    }
}

#[test]
fn quadratization_of_quadratic_costs_is_exact() {
    let cost = QuadraticCost::diagonal(&[1.0; 3], &[1.0; 2], &[1.0; 3]);
    let c = quadratize_cost(&cost, &[0.0; 3], &[0.0; 2], 0, 5).unwrap();
    assert_eq!(c.state_weight, DenseMatrix::identity(3));
    assert_eq!(c.control_weight, DenseMatrix::identity(2));
    assert_eq!(c.cross_weight, DenseMatrix::zeros(3, 2));
    assert!(c.state_linear.iter().chain(&c.control_linear).all(|&v| v == 0.0));

    let mut offset = cost.clone();
    offset.state_ref = vec![0.5, -1.0, 2.0];
    let c = quadratize_cost(&offset, &[0.0; 3], &[0.0; 2], 0, 5).unwrap();
    assert_eq!(c.state_linear, vec![-0.5, 1.0, -2.0]);
}

struct Smooth;

impl Cost for Smooth {
    fn running(&self, _node: usize, x: &[f64], u: &[f64]) -> f64 {
        x[0].cos() + x[1] * x[1] * x[0] + (0.5 * u[0]).exp() + x[1] * u[0]
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        x[0].powi(4) + x[1].sin()
    }
}

#[test]
fn quadratized_slope_matches_finite_differences() {
    let mut r = rng(6);
    for _ in 0..20 {
        let x = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let u = [r.random_range(-1.0..1.0)];
        let c = quadratize_cost(&Smooth, &x, &u, 0, 3).unwrap();
        let z = [x[0], x[1], u[0]];
        let g = richardson_jacobian(|v| vec![Smooth.running(0, &v[..2], &v[2..])], &z, 1e-3);
        let qx = c.state_weight.matvec(&x);
        let mx = c.cross_weight.matvec(&u);
        let ru = c.control_weight.matvec(&u);
        for k in 0..2 {
            assert!((qx[k] + mx[k] + c.state_linear[k] - g[(0, k)]).abs() < 1e-5);
        }
        let mtx = c.cross_weight.transpose().matvec(&x);
        assert!((ru[0] + mtx[0] + c.control_linear[0] - g[(0, 2)]).abs() < 1e-5);

        let t = quadratize_cost(&Smooth, &x, &[], 3, 3).unwrap();
        let gt = richardson_jacobian(|v| vec![Smooth.terminal(v)], &x, 1e-3);
        let qt = t.state_weight.matvec(&x);
        for k in 0..2 {
            assert!((qt[k] + t.state_linear[k] - gt[(0, k)]).abs() < 1e-5);
        }
        // PSD repair
        let eig = common::to_nalgebra(&t.state_weight).symmetric_eigenvalues();
        assert!(eig.min() >= -1e-12);
    }
}

#[test]
fn defect_examples() {
    let problem = double_integrator(40, 1.0, None);
    let mut r = rng(3);
    let controls: Vec<Vec<f64>> = (0..40).map(|_| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
    let exact = problem.rollout(&controls).unwrap();
    assert!(dynamics_defect(&problem, &exact).unwrap() < 1e-12);

    let mut last = exact.clone();
    last.states[40][0] += 0.1;
    assert!((dynamics_defect(&problem, &last).unwrap() - 0.1 / 40.0).abs() < 1e-12);

    // an interior node enters two intervals; a position offset propagates unchanged
    let mut mid = exact;
    mid.states[5][0] += 0.1;
    assert!((dynamics_defect(&problem, &mid).unwrap() - 0.2 / 40.0).abs() < 1e-12);
}

#[test]
fn fuel_matches_mass_depletion_of_a_fine_rollout() {
    let p = MarsParams::default();
    let problem = build_mars_problem(&p.nominal_initial_state(), &p).unwrap();
    let nominal = mars_nominal(&problem, &p);
    let rollout = problem.rollout(&nominal.controls).unwrap();
    let fuel = fuel_used(&nominal, &p);
    let drop = rollout.states[0][mars::MASS] - rollout.states[p.horizon][mars::MASS];
    assert!((fuel - drop).abs() < 1e-6, "{fuel} vs {drop}");
    let fine = fine_rollout(problem.dynamics.as_ref(), &problem.x_init, &nominal.controls, p.dt(), 32);
    assert!((fine[0][mars::MASS] - fine[p.horizon][mars::MASS] - fuel).abs() < 1e-6);
    for w in rollout.states.windows(2) {
        assert!(w[1][mars::MASS] < w[0][mars::MASS]);
    }
}

#[test]
fn quaternion_norm_drift_is_small_without_renormalization() {
    let qp = QuadrotorParams::default();
    let mp = MarsParams::default();
    let mut r = rng(12);
    let cases: Vec<(Box<dyn Dynamics>, Vec<f64>, Vec<Vec<f64>>, f64, std::ops::Range<usize>)> = vec![
        (
            Box::new(Quadrotor::new(qp.clone())),
            {
                let mut x = random_quadrotor_point(&mut r, &qp).0;
                x[quadrotor::RATE].copy_from_slice(&[0.5, -0.4, 0.3]);
                x
            },
            (0..50).map(|_| vec![9.81, 0.0, 0.0, 0.0]).collect(),
            0.12,
            quadrotor::QUAT,
        ),
        (
            Box::new(MarsLander { params: mp.clone() }),
            mp.nominal_initial_state(),
            (0..mp.horizon).map(|_| vec![1.5, 0.05, -0.02]).collect(),
            mp.dt(),
            mars::QUAT,
        ),
    ];
    for (f, x0, controls, dt, q) in cases {
        let mut x = x0;
        for u in &controls {
            x = rk4_step(f.as_ref(), &x, u, dt).unwrap();
        }
        let drift = (quat::norm(&x[q]) - 1.0).abs();
        assert!(drift < 1e-4);
    }
}

#[test]
fn hover_rollout_stays_put_for_six_seconds() {
    let task = QuadrotorTask { obstacles: vec![], goal: [-5.0, -5.0, 2.0], ..QuadrotorTask::ablation() };
    let problem = build_quadrotor_problem(&task).unwrap();
    let traj = problem.rollout(&vec![task.params.hover_control(); task.horizon]).unwrap();
    for x in &traj.states {
        assert!(norm2(&[x[0] + 5.0, x[1] + 5.0, x[2] - 2.0]) < 1e-9);
    }
}

#[test]
fn nominal_guesses() {
    let task = QuadrotorTask::ablation();
    let problem = build_quadrotor_problem(&task).unwrap();
    let line = initialize_nominal(&problem, None).unwrap();
    assert_eq!(&line.states[25][0..3], &[0.0, 0.0, 2.0]);
    let hover = quadrotor_nominal(&problem, &task.params);
    assert_eq!(&hover.states[25][0..3], &[0.0, 0.0, 2.0]);
    assert!(hover.controls.iter().all(|u| u == &vec![9.81, 0.0, 0.0, 0.0]));

    let p = MarsParams::default();
    let mp = build_mars_problem(&p.nominal_initial_state(), &p).unwrap();
    assert_eq!(mars_nominal(&mp, &p).states[0][mars::MASS], 2.0);
}

#[test]
fn scene_inside_obstacle_is_rejected() {
    let task = QuadrotorTask { obstacles: vec![Obstacle::sphere([-5.0, -5.0, 2.0], 1.0)], ..QuadrotorTask::ablation() };
    assert!(build_quadrotor_problem(&task).is_err());
}

#[test]
fn success_check_examples() {
    let task = QuadrotorTask { obstacles: vec![], goal: [-5.0, -5.0, 2.0], ..QuadrotorTask::ablation() };
    let mut problem = build_quadrotor_problem(&task).unwrap();
    let traj = problem.rollout(&vec![task.params.hover_control(); task.horizon]).unwrap();
    let t = SuccessThresholds::default();
    let ok = check_success(&problem, &traj, &t).unwrap();
    assert!(ok.success && ok.boundary_error < 1e-9 && ok.penetration == 0.0);

    problem.x_target[0] += 0.05;
    let miss = check_success(&problem, &traj, &t).unwrap();
    assert!(miss.boundary_ok && (miss.boundary_error - 0.05).abs() < 1e-9);

    let graze = Obstacle::sphere([-5.0, -5.0, 2.0 + 1.0 - 5e-3], 1.0);
    for s in problem.state_sets.iter_mut() {
        *s = s.clone().and(graze.exclusion_set());
    }
    let hit = check_success(&problem, &traj, &t).unwrap();
    assert!(!hit.penetration_ok && !hit.success);
    assert!((hit.penetration - 5e-3).abs() < 1e-9);
}

#[test]
fn linear_plant_in_a_problem_is_consistent() {
    let f = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]);
    let g = DenseMatrix::from_rows(&[vec![0.0], vec![1.0]]);
    let plant: Arc<dyn Dynamics> = Arc::new(LinearPlant { f, g });
    let lin = linearize_node(plant.as_ref(), &[0.0, 0.0], &[0.0], 0.1).unwrap();
    assert!(lin.d.iter().all(|v| v.abs() < 1e-15));
    let fd = richardson_jacobian(|x| rk4_step(plant.as_ref(), x, &[0.0], 0.1).unwrap(), &[0.3, -0.2], 1e-2);
    assert!((common::to_nalgebra(&lin.a) - fd).amax() < 1e-12);
}
