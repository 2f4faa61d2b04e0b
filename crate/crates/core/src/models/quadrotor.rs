//! 13-state quadrotor: position, velocity, attitude quaternion, body rates.
//! Control is total thrust along body z plus three body torques.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::quat;
use super::ModelError;
use crate::dense::{dist2, DenseMatrix};
use crate::ocp::{Dynamics, OcpProblem, QuadraticCost, Trajectory};
use crate::prox::ConvexSet;

pub const NX: usize = 13;
pub const NU: usize = 4;
pub const POS: std::ops::Range<usize> = 0..3;
pub const VEL: std::ops::Range<usize> = 3..6;
pub const QUAT: std::ops::Range<usize> = 6..10;
pub const RATE: std::ops::Range<usize> = 10..13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadrotorParams {
    pub mass: f64,
    pub gravity: f64,
    /// Diagonal of the inertia matrix (kg·m²).
    pub inertia: [f64; 3],
    pub thrust_min: f64,
    pub thrust_max: f64,
    pub torque_max: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self { mass: 1.0, gravity: 9.81, inertia: [0.01, 0.01, 0.02], thrust_min: 0.0, thrust_max: 20.0, torque_max: 5.0 }
    }
}

impl QuadrotorParams {
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn hover_control(&self) -> Vec<f64> {
        vec![self.hover_thrust(), 0.0, 0.0, 0.0]
    }
}

/// Typed view of a quadrotor state vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrotorState {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub attitude: [f64; 4],
    pub rates: [f64; 3],
}

impl QuadrotorState {
    pub fn hover_at(position: [f64; 3]) -> Self {
        Self { position, velocity: [0.0; 3], attitude: [1.0, 0.0, 0.0, 0.0], rates: [0.0; 3] }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(NX);
        v.extend_from_slice(&self.position);
        v.extend_from_slice(&self.velocity);
        v.extend_from_slice(&self.attitude);
        v.extend_from_slice(&self.rates);
        v
    }

    pub fn from_slice(x: &[f64]) -> Self {
        let mut s = Self::hover_at([0.0; 3]);
        s.position.copy_from_slice(&x[POS]);
        s.velocity.copy_from_slice(&x[VEL]);
        s.attitude.copy_from_slice(&x[QUAT]);
        s.rates.copy_from_slice(&x[RATE]);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quadrotor {
    pub params: QuadrotorParams,
}

impl Quadrotor {
    pub fn new(params: QuadrotorParams) -> Self {
        Self { params }
    }
}

/// Newton-Euler right-hand side.
pub fn quadrotor_dynamics(p: &QuadrotorParams, x: &[f64], u: &[f64], dx: &mut [f64]) {
    let q = &x[QUAT];
    let w = &x[RATE];
    let thrust_dir = quat::rotate(q, &[0.0, 0.0, 1.0]);
    for k in 0..3 {
        dx[k] = x[3 + k];
        dx[3 + k] = u[0] * thrust_dir[k] / p.mass;
    }
    dx[5] -= p.gravity;
    quat::kinematics(q, w, &mut dx[QUAT]);
    let wdot = quat::euler_rates(&p.inertia, w, &u[1..4]);
    dx[RATE].copy_from_slice(&wdot);
}

impl Dynamics for Quadrotor {
    fn state_dim(&self) -> usize {
        NX
    }

    fn control_dim(&self) -> usize {
        NU
    }

    fn derivative(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        quadrotor_dynamics(&self.params, x, u, dx);
    }

    fn normalize_state(&self, x: &mut [f64]) {
        quat::normalize(&mut x[QUAT]);
    }
}

/// Quadrotor with an extra world-frame acceleration held constant over a step.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbedQuadrotor {
    pub base: Quadrotor,
    pub acceleration: [f64; 3],
}

impl Dynamics for DisturbedQuadrotor {
    fn state_dim(&self) -> usize {
        NX
    }

    fn control_dim(&self) -> usize {
        NU
    }

    fn derivative(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        self.base.derivative(x, u, dx);
        for k in 0..3 {
            dx[3 + k] += self.acceleration[k];
        }
    }

    fn normalize_state(&self, x: &mut [f64]) {
        self.base.normalize_state(x);
    }
}

/// Exact discrete-map increment of a constant acceleration held over `dt`.
pub fn acceleration_offset(accel: &[f64; 3], dt: f64) -> Vec<f64> {
    let mut off = vec![0.0; NX];
    for k in 0..3 {
        off[k] = 0.5 * accel[k] * dt * dt;
        off[3 + k] = accel[k] * dt;
    }
    off
}

/// Obstacle geometry: spheres exclude a 3-D ball; cylinders are vertical
/// and exclude a disc in the horizontal plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Obstacle {
    Sphere { center: [f64; 3], radius: f64 },
    Cylinder { center: [f64; 2], radius: f64 },
}

impl Obstacle {
    pub fn sphere(center: [f64; 3], radius: f64) -> Self {
        Obstacle::Sphere { center, radius }
    }

    pub fn cylinder(center: [f64; 2], radius: f64) -> Self {
        Obstacle::Cylinder { center, radius }
    }

    /// Positive inside the obstacle.
    pub fn penetration(&self, position: &[f64]) -> f64 {
        match self {
            Obstacle::Sphere { center, radius } => radius - dist2(&position[..3], center),
            Obstacle::Cylinder { center, radius } => radius - dist2(&position[..2], center),
        }
    }

    pub fn inflated(&self, margin: f64) -> Self {
        match *self {
            Obstacle::Sphere { center, radius } => Obstacle::Sphere { center, radius: radius + margin },
            Obstacle::Cylinder { center, radius } => Obstacle::Cylinder { center, radius: radius + margin },
        }
    }

    pub fn exclusion_set(&self) -> ConvexSet {
        match self {
            Obstacle::Sphere { center, radius } => ConvexSet::ball_exterior(vec![0, 1, 2], center.to_vec(), *radius),
            Obstacle::Cylinder { center, radius } => ConvexSet::ball_exterior(vec![0, 1], center.to_vec(), *radius),
        }
    }
}

/// Cost weights for the quadrotor tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadrotorWeights {
    pub thrust: f64,
    pub torque: f64,
    pub velocity: f64,
    /// Pull of the free 4-vector toward the identity quaternion.
    pub attitude: f64,
    pub rates: f64,
    /// Running pull toward the goal position.
    #[serde(default)]
    pub position: f64,
}

impl Default for QuadrotorWeights {
    fn default() -> Self {
        Self { thrust: 1.0, torque: 1.0, velocity: 0.1, attitude: 1.0, rates: 0.1, position: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadrotorTask {
    pub start: [f64; 3],
    pub goal: [f64; 3],
    pub horizon: usize,
    pub duration: f64,
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub params: QuadrotorParams,
    #[serde(default)]
    pub weights: QuadrotorWeights,
}

impl QuadrotorTask {
    /// Hover-to-hover flight with three spheres across the straight path.
    pub fn ablation() -> Self {
        Self {
            start: [-5.0, -5.0, 2.0],
            goal: [5.0, 5.0, 2.0],
            horizon: 50,
            duration: 6.0,
            obstacles: vec![
                Obstacle::sphere([-2.4, -2.1, 2.0], 1.2),
                Obstacle::sphere([0.3, -0.2, 2.1], 1.5),
                Obstacle::sphere([2.6, 2.3, 1.9], 1.3),
            ],
            params: QuadrotorParams::default(),
            weights: QuadrotorWeights::default(),
        }
    }

    pub fn dt(&self) -> f64 {
        self.duration / self.horizon as f64
    }
}

/// Hover-to-hover problem: fixed start state, terminal position and zero
/// velocity, obstacle exclusion on every node, actuator boxes.
pub fn build_quadrotor_problem(task: &QuadrotorTask) -> Result<OcpProblem, ModelError> {
    if !(task.duration > 0.0) || task.horizon == 0 {
        return Err(ModelError::InvalidParameters("duration and horizon must be positive".into()));
    }
    for (k, obs) in task.obstacles.iter().enumerate() {
        if obs.penetration(&task.start) >= 0.0 || obs.penetration(&task.goal) >= 0.0 {
            return Err(ModelError::InfeasibleScene(format!("start or goal lies inside obstacle {k}")));
        }
    }
    build_quadrotor_problem_from(task, QuadrotorState::hover_at(task.start).to_vec())
}

/// Same problem from an arbitrary full initial state, without the scene
/// feasibility check (receding-horizon replans may start inside a buffer).
pub fn build_quadrotor_problem_from(task: &QuadrotorTask, x_init: Vec<f64>) -> Result<OcpProblem, ModelError> {
    if x_init.len() != NX || !(task.duration > 0.0) || task.horizon == 0 {
        return Err(ModelError::InvalidParameters("initial state, duration or horizon".into()));
    }
    let p = &task.params;
    let w = &task.weights;
    let n = task.horizon;
    let dt = task.dt();

    let mut qdiag = vec![0.0; NX];
    for i in POS {
        qdiag[i] = w.position;
    }
    for i in VEL {
        qdiag[i] = w.velocity;
    }
    for i in QUAT {
        qdiag[i] = w.attitude;
    }
    for i in RATE {
        qdiag[i] = w.rates;
    }
    let mut cost = QuadraticCost::diagonal(&qdiag, &[w.thrust, w.torque, w.torque, w.torque], &[0.0; NX]);
    cost.state_ref = QuadrotorState::hover_at(task.goal).to_vec();
    cost.control_ref = p.hover_control();

    let mut problem = OcpProblem::new(
        Arc::new(Quadrotor::new(p.clone())),
        Arc::new(cost),
        n,
        dt,
        x_init,
        vec![0, 1, 2, 3, 4, 5],
        vec![task.goal[0], task.goal[1], task.goal[2], 0.0, 0.0, 0.0],
    );
    let obstacle_set = task
        .obstacles
        .iter()
        .fold(ConvexSet::free(), |acc, o| acc.and(o.exclusion_set()));
    problem.state_sets = vec![obstacle_set; n + 1];
    let control_set = ConvexSet::boxed(
        vec![p.thrust_min, -p.torque_max, -p.torque_max, -p.torque_max],
        vec![p.thrust_max, p.torque_max, p.torque_max, p.torque_max],
    );
    problem.control_sets = vec![control_set; n];
    problem.validate()?;
    Ok(problem)
}

/// Straight-line nominal at constant velocity, level attitude, hover thrust.
pub fn quadrotor_nominal(problem: &OcpProblem, params: &QuadrotorParams) -> Trajectory {
    let n = problem.horizon;
    let start = &problem.x_init[POS];
    let goal = &problem.x_target[0..3];
    let total = n as f64 * problem.dt;
    let states = (0..=n)
        .map(|i| {
            let s = i as f64 / n as f64;
            let mut st = QuadrotorState::hover_at([0.0; 3]);
            for k in 0..3 {
                st.position[k] = start[k] + s * (goal[k] - start[k]);
                st.velocity[k] = (goal[k] - start[k]) / total;
            }
            st.to_vec()
        })
        .collect();
    Trajectory { states, controls: vec![params.hover_control(); n] }
}

/// Default trust-region radii: 20% of nominal coordinate ranges.
pub fn quadrotor_trust_radii(task: &QuadrotorTask) -> (Vec<f64>, Vec<f64>) {
    let span = task.start.iter().zip(&task.goal).map(|(a, b)| (a - b).abs()).fold(1.0, f64::max);
    let mut state = vec![0.0; NX];
    for i in POS {
        state[i] = 0.2 * span;
    }
    for i in VEL {
        state[i] = 0.2 * 10.0;
    }
    for i in QUAT {
        state[i] = 0.2 * 2.0;
    }
    for i in RATE {
        state[i] = 0.2 * 10.0;
    }
    let p = &task.params;
    let control = vec![
        0.2 * (p.thrust_max - p.thrust_min),
        0.2 * 2.0 * p.torque_max,
        0.2 * 2.0 * p.torque_max,
        0.2 * 2.0 * p.torque_max,
    ];
    (state, control)
}

/// Randomized scene: `count` spheres with radii in `radius_range`, centers
/// uniform in the corridor box between start and goal, rejection-sampled so
/// neither endpoint is covered.
pub fn random_scene(
    rng: &mut impl Rng,
    start: [f64; 3],
    goal: [f64; 3],
    count: usize,
    radius_range: (f64, f64),
    clearance: f64,
) -> Vec<Obstacle> {
    let lo: Vec<f64> = (0..3).map(|k| start[k].min(goal[k])).collect();
    let hi: Vec<f64> = (0..3).map(|k| start[k].max(goal[k])).collect();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let radius = rng.random_range(radius_range.0..=radius_range.1);
        let center = [
            rng.random_range(lo[0]..=hi[0]),
            rng.random_range(lo[1]..=hi[1]),
            if hi[2] > lo[2] { rng.random_range(lo[2]..=hi[2]) } else { lo[2] },
        ];
        let obs = Obstacle::sphere(center, radius);
        if obs.penetration(&start) < -clearance && obs.penetration(&goal) < -clearance {
            out.push(obs);
        }
    }
    out
}

/// Selector matrix for a list of selected indices.
pub fn selector(indices: &[usize], n_x: usize) -> DenseMatrix {
    DenseMatrix::from_fn(indices.len(), n_x, |r, c| if indices[r] == c { 1.0 } else { 0.0 })
}
