//! Closed-loop robust MPC: corridor crosswind, disturbance observer,
//! scenario-coupled replanning, 2σ prediction tube.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::admm::AdmmState;
use crate::dense::dist2;
use crate::models::quadrotor::{
    build_quadrotor_problem_from, quadrotor_nominal, quadrotor_trust_radii, DisturbedQuadrotor, Obstacle, Quadrotor,
    QuadrotorParams, QuadrotorState, QuadrotorTask, QuadrotorWeights, POS, VEL,
};
use crate::ocp::{rk4_step, Dynamics, OcpError, Trajectory};
use crate::scp::{scp_solve, ScpConfig, TrustRadii};

use super::scenario::{scenario_solve, ScenarioBundle, DEFAULT_COUPLING_SCALE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindParams {
    pub base: [f64; 3],
    pub noise_std: f64,
    /// Open interval in world X where the wind blows.
    pub corridor: (f64, f64),
}

impl Default for WindParams {
    fn default() -> Self {
        Self { base: [0.0, 2.5, -1.0], noise_std: 0.5, corridor: (-2.5, 2.5) }
    }
}

/// Zero outside the corridor; inside, the base vector plus Gaussian noise.
pub fn wind_disturbance(position: &[f64], rng: &mut impl Rng, params: &WindParams) -> [f64; 3] {
    let x = position[0];
    if !(x > params.corridor.0 && x < params.corridor.1) {
        return [0.0; 3];
    }
    let mut a = params.base;
    for c in &mut a {
        let eta: f64 = rng.sample(StandardNormal);
        *c += params.noise_std * eta;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverState {
    pub estimate: [f64; 3],
    pub gain: f64,
}

impl ObserverState {
    pub fn new(gain: f64) -> Self {
        Self { estimate: [0.0; 3], gain }
    }
}

/// First-order low-pass of the acceleration mismatch.
pub fn observer_update(obs: &ObserverState, measured: &[f64; 3], model: &[f64; 3]) -> ObserverState {
    let g = obs.gain;
    let mut estimate = obs.estimate;
    for k in 0..3 {
        estimate[k] = (1.0 - g) * estimate[k] + g * (measured[k] - model[k]);
    }
    ObserverState { estimate, gain: g }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub start: [f64; 3],
    pub target: [f64; 3],
    pub obstacle: Obstacle,
    pub buffer: f64,
    /// Extra inflation used only by the planner so the scenario tube, not
    /// just each scenario, stays outside the buffered obstacle.
    pub tube_margin: f64,
    pub horizon: usize,
    pub dt: f64,
    pub scenarios: usize,
    /// Noise multipliers run linearly from 0 to this value across scenarios.
    pub ladder_max: f64,
    pub capture_radius: f64,
    pub max_steps: usize,
    pub observer_gain: f64,
    pub coupling_scale: f64,
    /// See [`ScenarioBundle::polish_iterations`].
    pub polish_iterations: usize,
    pub polish_coupling_scale: f64,
    pub consensus_tol: f64,
    /// Seed each replan with the shifted ADMM duals and auxiliaries.
    pub warm_duals: bool,
    pub wind: WindParams,
    pub scp: ScpConfig,
    /// SCP settings for the first plan, which starts from a cold straight line.
    pub first_scp: ScpConfig,
    pub params: QuadrotorParams,
    pub weights: QuadrotorWeights,
    pub seed: u64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            start: [-4.0, -5.0, 2.0],
            target: [5.0, 5.0, 2.0],
            obstacle: Obstacle::cylinder([0.5, 0.0], 3.0),
            buffer: 0.5,
            tube_margin: 0.3,
            horizon: 30,
            dt: 0.15,
            scenarios: 15,
            ladder_max: 2.0,
            capture_radius: 0.3,
            max_steps: 100,
            observer_gain: 0.5,
            coupling_scale: DEFAULT_COUPLING_SCALE,
            polish_iterations: 2000,
            polish_coupling_scale: 1e4,
            consensus_tol: 1e-7,
            warm_duals: false,
            wind: WindParams::default(),
            scp: ScpConfig { max_outer: 8, rho0: 1e1, rhof: 1e3, inner_iterations: 100, ..ScpConfig::default() },
            first_scp: ScpConfig { max_outer: 15, rho0: 1e1, rhof: 1e3, inner_iterations: 100, ..ScpConfig::default() },
            params: QuadrotorParams::default(),
            // position tracking pulls the plan in once the terminal node can
            // no longer reach the target within the receding horizon
            weights: QuadrotorWeights { position: 1.0, ..QuadrotorWeights::default() },
            seed: 0,
        }
    }
}

impl MpcConfig {
    pub fn planning_task(&self) -> QuadrotorTask {
        QuadrotorTask {
            start: self.start,
            goal: self.target,
            horizon: self.horizon,
            duration: self.horizon as f64 * self.dt,
            obstacles: vec![self.obstacle.inflated(self.buffer + self.tube_margin)],
            params: self.params.clone(),
            weights: self.weights.clone(),
        }
    }

    /// Scenario `k`'s noise multiplier.
    pub fn ladder(&self, k: usize) -> f64 {
        if self.scenarios <= 1 {
            0.0
        } else {
            self.ladder_max * k as f64 / (self.scenarios - 1) as f64
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpcStep {
    pub step: usize,
    pub state: Vec<f64>,
    pub control: Vec<f64>,
    pub distance: f64,
    pub plan_seconds: f64,
    pub wind: [f64; 3],
    pub estimate: [f64; 3],
    pub plan_failed: bool,
    pub u0_dispersion: f64,
    /// Physical-copy distance to the consensus `u_0`.
    pub consensus_gap: f64,
    pub max_defect: f64,
    /// `K × (N+1)` predicted positions.
    pub fans: Vec<Vec<[f64; 3]>>,
    pub tube_mean: Vec<[f64; 3]>,
    /// Per-node `2σ` of the scenario positions, per axis.
    pub tube_radius: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpcLog {
    pub steps: Vec<MpcStep>,
    pub final_state: Vec<f64>,
    pub final_distance: f64,
    /// Number of applied controls before capture, if captured.
    pub captured_at: Option<usize>,
    pub seed: u64,
}

impl MpcLog {
    pub fn max_u0_dispersion(&self) -> f64 {
        self.steps.iter().filter(|s| !s.plan_failed).map(|s| s.u0_dispersion).fold(0.0, f64::max)
    }

    /// Smallest horizontal gap between any node's `2σ` box and `obstacle`;
    /// negative means the tube intersects it.
    pub fn min_tube_clearance(&self, obstacle: &Obstacle) -> f64 {
        self.steps
            .iter()
            .filter(|s| !s.plan_failed)
            .flat_map(|s| s.tube_mean.iter().zip(&s.tube_radius))
            .map(|(m, r)| tube_clearance(m, r, obstacle))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Distance from the box `mean ± radius` to the obstacle surface.
pub fn tube_clearance(mean: &[f64; 3], radius: &[f64; 3], obstacle: &Obstacle) -> f64 {
    let (center, r, dims): (&[f64], f64, usize) = match obstacle {
        Obstacle::Sphere { center, radius } => (center, *radius, 3),
        Obstacle::Cylinder { center, radius } => (center, *radius, 2),
    };
    // closest point of the box to the center
    let closest: Vec<f64> = (0..dims).map(|k| center[k].clamp(mean[k] - radius[k], mean[k] + radius[k])).collect();
    dist2(&closest, &center[..dims]) - r
}

/// Per-node mean and `2σ` (population std) of the scenario positions.
pub fn tube_statistics(fans: &[Vec<[f64; 3]>]) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let k = fans.len() as f64;
    let nodes = fans[0].len();
    let mut means = Vec::with_capacity(nodes);
    let mut radii = Vec::with_capacity(nodes);
    for i in 0..nodes {
        let mut m = [0.0; 3];
        for f in fans {
            for a in 0..3 {
                m[a] += f[i][a] / k;
            }
        }
        let mut v = [0.0; 3];
        for f in fans {
            for a in 0..3 {
                v[a] += (f[i][a] - m[a]).powi(2) / k;
            }
        }
        means.push(m);
        radii.push([2.0 * v[0].sqrt(), 2.0 * v[1].sqrt(), 2.0 * v[2].sqrt()]);
    }
    (means, radii)
}

fn shift_trajectory(t: &Trajectory, x0: &[f64]) -> Trajectory {
    let mut states: Vec<Vec<f64>> = t.states[1..].to_vec();
    states.push(t.states[t.states.len() - 1].clone());
    states[0] = x0.to_vec();
    let mut controls: Vec<Vec<f64>> = t.controls[1..].to_vec();
    controls.push(t.controls[t.controls.len() - 1].clone());
    Trajectory { states, controls }
}

/// One step of the true plant under `wind`.
pub fn plant_step(params: &QuadrotorParams, x: &[f64], u: &[f64], wind: [f64; 3], dt: f64) -> Result<Vec<f64>, OcpError> {
    let plant = DisturbedQuadrotor { base: Quadrotor::new(params.clone()), acceleration: wind };
    let mut next = rk4_step(&plant, x, u, dt)?;
    plant.normalize_state(&mut next);
    Ok(next)
}

/// Runs the receding-horizon loop until capture or the step limit.
pub fn mpc_run(config: &MpcConfig) -> Result<MpcLog, OcpError> {
    let task = config.planning_task();
    let (rs, rc) = quadrotor_trust_radii(&task);
    let radii = TrustRadii { state: rs, control: rc };
    let mut wind_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut scen_rng = ChaCha8Rng::seed_from_u64(config.seed);
    scen_rng.set_stream(1);
    let model = Quadrotor::new(config.params.clone());

    let mut x = QuadrotorState::hover_at(config.start).to_vec();
    let mut observer = ObserverState::new(config.observer_gain);
    let mut plans: Option<(Vec<Trajectory>, Vec<AdmmState>)> = None;
    let mut steps = Vec::new();
    let mut captured_at = None;

    for step in 0..config.max_steps {
        let distance = dist2(&x[POS], &config.target);
        if distance < config.capture_radius {
            captured_at = Some(step);
            break;
        }
        let base = build_quadrotor_problem_from(&task, x.clone()).map_err(|e| OcpError::InvalidProblem(e.to_string()))?;
        let disturbances: Vec<Vec<[f64; 3]>> = (0..config.scenarios)
            .map(|k| {
                let s = config.ladder(k) * config.wind.noise_std;
                (0..config.horizon)
                    .map(|_| {
                        let mut a = observer.estimate;
                        for c in &mut a {
                            let eta: f64 = scen_rng.sample(StandardNormal);
                            *c += s * eta;
                        }
                        a
                    })
                    .collect()
            })
            .collect();
        let (guesses, warm, scp) = match &plans {
            Some((trajs, states)) => (
                trajs.iter().map(|t| shift_trajectory(t, &x)).collect(),
                config.warm_duals.then(|| states.iter().map(AdmmState::shifted).collect()),
                &config.scp,
            ),
            None => {
                // The straight line can be symmetric about the obstacle; pick a side
                // with one undisturbed solve so all scenarios start from it.
                let line = quadrotor_nominal(&base, &config.params);
                let seed = match scp_solve(&base, Some(&line), &radii, &config.first_scp) {
                    Ok(r) if r.trajectory.is_finite() => r.trajectory,
                    _ => line,
                };
                (vec![seed; config.scenarios], None, &config.first_scp)
            }
        };
        let bundle = ScenarioBundle {
            base,
            disturbances,
            guesses,
            radii: radii.clone(),
            coupling_scale: config.coupling_scale,
            warm,
            polish_iterations: config.polish_iterations,
            polish_coupling_scale: config.polish_coupling_scale,
            consensus_tol: config.consensus_tol,
        };
        let t0 = Instant::now();
        let solved = scenario_solve(&bundle, scp);
        let plan_seconds = t0.elapsed().as_secs_f64();

        let (control, failed, dispersion, consensus_gap, max_defect, fans) = match solved {
            Ok(sol) if sol.trajectories.iter().all(Trajectory::is_finite) => {
                let gap = sol.u0_consensus_gap;
                let fans: Vec<Vec<[f64; 3]>> = sol
                    .trajectories
                    .iter()
                    .map(|t| t.states.iter().map(|s| [s[0], s[1], s[2]]).collect())
                    .collect();
                let d = sol.defects.iter().copied().fold(0.0, f64::max);
                let u = sol.shared_u0.clone();
                plans = Some((sol.trajectories, sol.states));
                (u, false, sol.u0_dispersion, gap, d, fans)
            }
            _ => {
                // previous plan's next control, else hover
                let u = match &plans {
                    Some((trajs, _)) => trajs[0].controls.get(1).cloned().unwrap_or_else(|| config.params.hover_control()),
                    None => config.params.hover_control(),
                };
                if let Some((trajs, states)) = plans.take() {
                    plans = Some((trajs.iter().map(|t| shift_trajectory(t, &x)).collect(), states.iter().map(AdmmState::shifted).collect()));
                }
                (u, true, f64::NAN, f64::NAN, f64::NAN, Vec::new())
            }
        };
        let (tube_mean, tube_radius) = if fans.is_empty() { (Vec::new(), Vec::new()) } else { tube_statistics(&fans) };

        let wind = wind_disturbance(&x[POS], &mut wind_rng, &config.wind);
        let next = plant_step(&config.params, &x, &control, wind, config.dt)?;
        let mut predicted = rk4_step(&model, &x, &control, config.dt)?;
        model.normalize_state(&mut predicted);
        let mut measured = [0.0; 3];
        let mut modeled = [0.0; 3];
        for k in 0..3 {
            measured[k] = (next[VEL.start + k] - x[VEL.start + k]) / config.dt;
            modeled[k] = (predicted[VEL.start + k] - x[VEL.start + k]) / config.dt;
        }
        observer = observer_update(&observer, &measured, &modeled);

        steps.push(MpcStep {
            step,
            state: x.clone(),
            control,
            distance,
            plan_seconds,
            wind,
            estimate: observer.estimate,
            plan_failed: failed,
            u0_dispersion: dispersion,
            consensus_gap,
            max_defect,
            fans,
            tube_mean,
            tube_radius,
        });
        x = next;
    }
    let final_distance = dist2(&x[POS], &config.target);
    if captured_at.is_none() && final_distance < config.capture_radius {
        captured_at = Some(steps.len());
    }
    Ok(MpcLog { steps, final_state: x, final_distance, captured_at, seed: config.seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wind_outside_corridor_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(wind_disturbance(&[3.0, 0.0, 2.0], &mut rng, &WindParams::default()), [0.0; 3]);
    }

    #[test]
    fn noiseless_wind_is_base() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = WindParams { noise_std: 0.0, ..WindParams::default() };
        assert_eq!(wind_disturbance(&[0.0, 0.0, 2.0], &mut rng, &p), [0.0, 2.5, -1.0]);
    }

    #[test]
    fn observer_decays_geometrically() {
        let mut o = ObserverState { estimate: [1.0, -2.0, 4.0], gain: 0.25 };
        for _ in 0..3 {
            o = observer_update(&o, &[0.5; 3], &[0.5; 3]);
        }
        let f = 0.75_f64.powi(3);
        assert_eq!(o.estimate, [f, -2.0 * f, 4.0 * f]);
    }

    #[test]
    fn observer_tracks_constant_mismatch() {
        let mut o = ObserverState::new(0.3);
        let c = [0.0, 2.5, -1.0];
        for t in 1..=20 {
            o = observer_update(&o, &c, &[0.0; 3]);
            let err = 0.7_f64.powi(t);
            for k in 0..3 {
                assert!((o.estimate[k] - c[k] * (1.0 - err)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tube_clearance_of_box() {
        let cyl = Obstacle::cylinder([0.0, 0.0], 1.0);
        assert!((tube_clearance(&[3.0, 0.0, 0.0], &[0.5, 0.5, 0.0], &cyl) - 1.5).abs() < 1e-12);
        assert!(tube_clearance(&[1.2, 0.0, 0.0], &[0.5, 0.0, 0.0], &cyl) < 0.0);
    }
}
