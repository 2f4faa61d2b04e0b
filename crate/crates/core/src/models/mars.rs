//! 14-state Mars powered-descent vehicle in nondimensional units.
//!
//! Frame is Up-East-North: index 0 of every 3-vector is the local vertical.
//! State layout `[m, r(3), v(3), q(4), ω(3)]`, control is the body-frame
//! thrust vector `T_B`. The engine sits a distance `moment_arm` below the
//! center of mass along the body up axis, so lateral thrust produces torque.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::quat;
use super::ModelError;
use crate::dense::norm2;
use crate::ocp::{Dynamics, OcpProblem, QuadraticCost, Trajectory};
use crate::prox::ConvexSet;

pub const NX: usize = 14;
pub const NU: usize = 3;
pub const MASS: usize = 0;
pub const POS: std::ops::Range<usize> = 1..4;
pub const VEL: std::ops::Range<usize> = 4..7;
pub const QUAT: std::ops::Range<usize> = 7..11;
pub const RATE: std::ops::Range<usize> = 11..14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarsParams {
    pub alpha: f64,
    pub mass_dry: f64,
    pub mass_wet: f64,
    pub thrust_min: f64,
    pub thrust_max: f64,
    pub gimbal_deg: f64,
    /// Minimum elevation of the vehicle seen from the landing site.
    pub glide_slope_deg: f64,
    pub tilt_max_deg: f64,
    pub rate_max_deg: f64,
    pub duration: f64,
    pub horizon: usize,
    pub gravity: f64,
    pub inertia: [f64; 3],
    pub moment_arm: f64,
    pub initial_position: [f64; 3],
    pub initial_velocity: [f64; 3],
    pub target_velocity: [f64; 3],
    /// Weight of the linear fuel surrogate on axial thrust.
    pub fuel_weight: f64,
    /// Quadratic thrust regularization keeping `R` positive definite.
    pub thrust_regularization: f64,
    pub rate_weight: f64,
}

impl Default for MarsParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            mass_dry: 0.75,
            mass_wet: 2.0,
            thrust_min: 0.5,
            thrust_max: 3.0,
            gimbal_deg: 10.0,
            glide_slope_deg: 10.0,
            tilt_max_deg: 20.0,
            rate_max_deg: 30.0,
            duration: 5.0,
            horizon: 30,
            gravity: 1.0,
            inertia: [0.01, 0.02, 0.02],
            moment_arm: 0.05,
            initial_position: [2.0, 1.0, 0.0],
            initial_velocity: [-1.0, 0.2, 0.0],
            target_velocity: [-0.1, 0.0, 0.0],
            fuel_weight: 1.0,
            thrust_regularization: 0.05,
            rate_weight: 0.1,
        }
    }
}

impl MarsParams {
    pub fn dt(&self) -> f64 {
        self.duration / self.horizon as f64
    }

    /// Nominal initial state: wet mass, upright, at rest rotationally.
    pub fn nominal_initial_state(&self) -> Vec<f64> {
        MarsState {
            mass: self.mass_wet,
            position: self.initial_position,
            velocity: self.initial_velocity,
            attitude: [1.0, 0.0, 0.0, 0.0],
            rates: [0.0; 3],
        }
        .to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarsState {
    pub mass: f64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub attitude: [f64; 4],
    pub rates: [f64; 3],
}

impl MarsState {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(NX);
        v.push(self.mass);
        v.extend_from_slice(&self.position);
        v.extend_from_slice(&self.velocity);
        v.extend_from_slice(&self.attitude);
        v.extend_from_slice(&self.rates);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarsLander {
    pub params: MarsParams,
}

/// `ṁ = −α‖T_B‖`, `ṙ = v`, `v̇ = R(q)T_B/m + g`, `q̇ = ½q⊗ω`,
/// `ω̇ = J⁻¹(r_T × T_B − ω × Jω)` with `r_T = −l·e_up`.
pub fn mars_dynamics(p: &MarsParams, x: &[f64], u: &[f64], dx: &mut [f64]) {
    let m = x[MASS];
    let q = &x[QUAT];
    let w = &x[RATE];
    dx[MASS] = -p.alpha * norm2(u);
    let thrust = quat::rotate(q, u);
    for k in 0..3 {
        dx[POS.start + k] = x[VEL.start + k];
        dx[VEL.start + k] = thrust[k] / m;
    }
    dx[VEL.start] -= p.gravity;
    quat::kinematics(q, w, &mut dx[QUAT]);
    let torque = quat::cross(&[-p.moment_arm, 0.0, 0.0], u);
    let wdot = quat::euler_rates(&p.inertia, w, &torque);
    dx[RATE].copy_from_slice(&wdot);
}

impl Dynamics for MarsLander {
    fn state_dim(&self) -> usize {
        NX
    }

    fn control_dim(&self) -> usize {
        NU
    }

    fn derivative(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        mars_dynamics(&self.params, x, u, dx);
    }

    fn normalize_state(&self, x: &mut [f64]) {
        quat::normalize(&mut x[QUAT]);
    }
}

/// Physical constraint sets of the lander as (state set, control set).
pub fn mars_sets(p: &MarsParams) -> (ConvexSet, ConvexSet) {
    let half_tilt = 0.5 * p.tilt_max_deg.to_radians();
    let state = ConvexSet::box_on(vec![MASS], vec![p.mass_dry], vec![p.mass_wet])
        .and(ConvexSet::cone_deg(POS.collect(), vec![1.0, 0.0, 0.0], 90.0 - p.glide_slope_deg))
        // cos(tilt) = 1 − 2(q_y² + q_z²) for the body up axis
        .and(ConvexSet::ball(vec![QUAT.start + 2, QUAT.start + 3], vec![0.0, 0.0], half_tilt.sin()))
        .and(ConvexSet::ball(RATE.collect(), vec![0.0; 3], p.rate_max_deg.to_radians()));
    let control = ConvexSet::cone_deg(vec![0, 1, 2], vec![1.0, 0.0, 0.0], p.gimbal_deg)
        .and(ConvexSet::ball(vec![0, 1, 2], vec![0.0; 3], p.thrust_max))
        .and(ConvexSet::ball_exterior(vec![0, 1, 2], vec![0.0; 3], p.thrust_min));
    (state, control)
}

/// Terminal selector: position, velocity, tilt quaternion components, rates.
pub fn terminal_indices() -> Vec<usize> {
    let mut idx: Vec<usize> = POS.chain(VEL).collect();
    idx.extend([QUAT.start + 2, QUAT.start + 3]);
    idx.extend(RATE);
    idx
}

/// Min-fuel landing from `x0` (its mass is clipped into the admissible
/// range) to the origin with soft terminal velocity, upright and not rotating.
pub fn build_mars_problem(x0: &[f64], p: &MarsParams) -> Result<OcpProblem, ModelError> {
    if x0.len() != NX || x0.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::InvalidParameters("initial state must be 14 finite values".into()));
    }
    let mut x_init = x0.to_vec();
    x_init[MASS] = x_init[MASS].clamp(p.mass_dry, p.mass_wet);
    quat::normalize(&mut x_init[QUAT]);

    let mut qdiag = vec![0.0; NX];
    for i in RATE {
        qdiag[i] = p.rate_weight;
    }
    let mut cost = QuadraticCost::diagonal(&qdiag, &[p.thrust_regularization; 3], &[0.0; NX]);
    cost.control_linear = vec![p.fuel_weight, 0.0, 0.0];

    let mut target = Vec::new();
    target.extend([0.0; 3]);
    target.extend(p.target_velocity);
    target.extend([0.0; 2]);
    target.extend([0.0; 3]);
    let n = p.horizon;
    let mut problem = OcpProblem::new(
        Arc::new(MarsLander { params: p.clone() }),
        Arc::new(cost),
        n,
        p.dt(),
        x_init,
        terminal_indices(),
        target,
    );
    let (state, control) = mars_sets(p);
    problem.state_sets = vec![state; n + 1];
    problem.control_sets = vec![control; n];
    problem.validate()?;
    Ok(problem)
}

/// Linear position/mass interpolation, upright attitude, gravity-cancelling thrust.
pub fn mars_nominal(problem: &OcpProblem, p: &MarsParams) -> Trajectory {
    let n = problem.horizon;
    let x0 = &problem.x_init;
    let total = p.duration;
    let mut states = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let s = i as f64 / n as f64;
        let mut x = vec![0.0; NX];
        x[MASS] = x0[MASS] + s * (p.mass_dry - x0[MASS]);
        for k in 0..3 {
            x[POS.start + k] = (1.0 - s) * x0[POS.start + k];
            x[VEL.start + k] = -x0[POS.start + k] / total;
        }
        x[QUAT.start] = 1.0;
        states.push(x);
    }
    let controls = states[..n]
        .iter()
        .map(|x| vec![(x[MASS] * p.gravity).clamp(p.thrust_min, p.thrust_max), 0.0, 0.0])
        .collect();
    Trajectory { states, controls }
}

/// 20% of the nominal coordinate ranges.
pub fn mars_trust_radii(p: &MarsParams) -> (Vec<f64>, Vec<f64>) {
    let mut s = vec![0.0; NX];
    s[MASS] = 0.2 * (p.mass_wet - p.mass_dry);
    let span = p.initial_position.iter().fold(1.0, |a: f64, b| a.max(b.abs()));
    for i in POS {
        s[i] = 0.2 * span;
    }
    let vspan = p.initial_velocity.iter().fold(1.0, |a: f64, b| a.max(b.abs()));
    for i in VEL {
        s[i] = 0.2 * vspan;
    }
    for i in QUAT {
        s[i] = 0.2 * 2.0 * (0.5 * p.tilt_max_deg.to_radians()).sin();
    }
    for i in RATE {
        s[i] = 0.2 * 2.0 * p.rate_max_deg.to_radians();
    }
    (s, vec![0.2 * p.thrust_max; NU])
}

/// `α Σ ‖T_B,i‖ Δt`.
pub fn fuel_used(traj: &Trajectory, p: &MarsParams) -> f64 {
    traj.controls.iter().map(|u| p.alpha * norm2(u) * p.dt()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::rk4_step;

    #[test]
    fn mass_rate_at_max_thrust() {
        let p = MarsParams::default();
        let x = p.nominal_initial_state();
        let mut dx = vec![0.0; NX];
        mars_dynamics(&p, &x, &[3.0, 0.0, 0.0], &mut dx);
        assert!((dx[MASS] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn zero_thrust_is_free_fall() {
        let p = MarsParams::default();
        let x = p.nominal_initial_state();
        let mut dx = vec![0.0; NX];
        mars_dynamics(&p, &x, &[0.0; 3], &mut dx);
        assert_eq!(dx[MASS], 0.0);
        assert_eq!(&dx[VEL], &[-1.0, 0.0, 0.0]);
        assert!(dx[RATE].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn axial_thrust_makes_no_torque() {
        let p = MarsParams::default();
        let x = p.nominal_initial_state();
        let mut dx = vec![0.0; NX];
        mars_dynamics(&p, &x, &[2.0, 0.0, 0.0], &mut dx);
        assert!(dx[RATE].iter().all(|v| *v == 0.0));
        mars_dynamics(&p, &x, &[2.0, 0.1, 0.0], &mut dx);
        // r_T × T = (−l,0,0) × (2, 0.1, 0) = (0, 0, −0.1 l)
        assert!((dx[RATE.start + 2] + 0.1 * p.moment_arm / p.inertia[2]).abs() < 1e-15);
    }

    #[test]
    fn nominal_starts_at_wet_mass() {
        let p = MarsParams::default();
        let prob = build_mars_problem(&p.nominal_initial_state(), &p).unwrap();
        let nom = mars_nominal(&prob, &p);
        assert_eq!(nom.states[0][MASS], 2.0);
        assert!((nom.states[p.horizon][MASS] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn initial_state_satisfies_path_sets() {
        let p = MarsParams::default();
        let (state, _) = mars_sets(&p);
        assert!(state.contains(&p.nominal_initial_state(), 1e-12));
    }

    #[test]
    fn overfull_mass_is_clipped() {
        let p = MarsParams::default();
        let mut x0 = p.nominal_initial_state();
        x0[MASS] = 2.1;
        let prob = build_mars_problem(&x0, &p).unwrap();
        assert_eq!(prob.x_init[MASS], 2.0);
    }

    #[test]
    fn step_with_depletion_matches_rate() {
        let p = MarsParams::default();
        let x = p.nominal_initial_state();
        let next = rk4_step(&MarsLander { params: p.clone() }, &x, &[1.5, 0.0, 0.0], p.dt()).unwrap();
        assert!((x[MASS] - next[MASS] - 0.1 * 1.5 * p.dt()).abs() < 1e-14);
    }
}
