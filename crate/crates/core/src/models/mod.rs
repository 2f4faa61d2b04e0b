//! Benchmark systems and their success criteria.

pub mod mars;
pub mod quadrotor;
pub mod quat;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::dist2;
use crate::ocp::{dynamics_defect, OcpError, OcpProblem, Trajectory};
use crate::prox::ConvexSet;

pub use mars::{build_mars_problem, MarsLander, MarsParams, MarsState};
pub use quadrotor::{build_quadrotor_problem, Obstacle, Quadrotor, QuadrotorParams, QuadrotorState, QuadrotorTask};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("infeasible scene: {0}")]
    InfeasibleScene(String),
    #[error("invalid model parameters: {0}")]
    InvalidParameters(String),
    #[error(transparent)]
    Problem(#[from] OcpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessThresholds {
    pub defect: f64,
    pub penetration: f64,
    pub boundary: f64,
}

impl Default for SuccessThresholds {
    fn default() -> Self {
        Self { defect: 1e-2, penetration: 1e-3, boundary: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub defect: f64,
    /// Worst intrusion into an exclusion region or cone over all nodes.
    pub penetration: f64,
    /// `‖x_0 − x_init‖ + ‖S x_N − x_target‖`.
    pub boundary_error: f64,
    pub defect_ok: bool,
    pub penetration_ok: bool,
    pub boundary_ok: bool,
    pub success: bool,
}

fn geometric_violation(set: &ConvexSet, v: &[f64]) -> f64 {
    match set {
        ConvexSet::BallExterior { .. } | ConvexSet::SecondOrderCone { .. } => set.distance(v).unwrap_or(f64::INFINITY),
        ConvexSet::Chain { members } => members.iter().map(|m| geometric_violation(m, v)).fold(0.0, f64::max),
        _ => 0.0,
    }
}

/// Largest intrusion into an obstacle or cone constraint along the trajectory.
pub fn max_penetration(problem: &OcpProblem, traj: &Trajectory) -> f64 {
    traj.states
        .iter()
        .zip(&problem.state_sets)
        .map(|(x, s)| geometric_violation(s, x))
        .fold(0.0, f64::max)
}

/// Largest distance to any path-set member, states and controls.
pub fn max_path_violation(problem: &OcpProblem, traj: &Trajectory) -> f64 {
    let states = traj.states.iter().zip(&problem.state_sets);
    let controls = traj.controls.iter().zip(&problem.control_sets);
    states
        .chain(controls)
        .map(|(v, s)| s.distance(v).unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max)
}

pub fn boundary_error(problem: &OcpProblem, traj: &Trajectory) -> f64 {
    let start = dist2(&traj.states[0], &problem.x_init);
    let last = &traj.states[problem.horizon];
    let sel: Vec<f64> = problem.terminal_indices.iter().map(|&i| last[i]).collect();
    start + dist2(&sel, &problem.x_target)
}

/// Rollout defect, penetration and boundary checks with margins.
pub fn check_success(problem: &OcpProblem, traj: &Trajectory, t: &SuccessThresholds) -> Result<SuccessReport, OcpError> {
    let defect = dynamics_defect(problem, traj)?;
    let penetration = max_penetration(problem, traj);
    let boundary = boundary_error(problem, traj);
    let defect_ok = defect < t.defect;
    let penetration_ok = penetration < t.penetration;
    let boundary_ok = boundary < t.boundary;
    Ok(SuccessReport {
        defect,
        penetration,
        boundary_error: boundary,
        defect_ok,
        penetration_ok,
        boundary_ok,
        success: defect_ok && penetration_ok && boundary_ok && traj.is_finite(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use quadrotor::{quadrotor_nominal, POS};

    fn hover_problem() -> (OcpProblem, Trajectory) {
        let task = QuadrotorTask {
            start: [0.0, 0.0, 2.0],
            goal: [0.0, 0.0, 2.0],
            horizon: 20,
            duration: 2.0,
            obstacles: vec![Obstacle::sphere([3.0, 0.0, 2.0], 1.0)],
            params: QuadrotorParams::default(),
            weights: Default::default(),
        };
        let p = build_quadrotor_problem(&task).unwrap();
        let controls = vec![task.params.hover_control(); 20];
        let traj = p.rollout(&controls).unwrap();
        (p, traj)
    }

    #[test]
    fn exact_feasible_trajectory_passes() {
        let (p, traj) = hover_problem();
        let r = check_success(&p, &traj, &SuccessThresholds::default()).unwrap();
        assert!(r.success);
        assert!(r.defect < 1e-12 && r.penetration == 0.0 && r.boundary_error < 1e-12);
    }

    #[test]
    fn small_terminal_miss_passes_boundary() {
        let (p, mut traj) = hover_problem();
        // shift the whole arc so dynamics stay consistent, then restore x_0
        for x in traj.states.iter_mut().skip(1) {
            x[0] += 0.05;
        }
        let r = check_success(&p, &traj, &SuccessThresholds::default()).unwrap();
        assert!((r.boundary_error - 0.05).abs() < 1e-12);
        assert!(r.boundary_ok);
    }

    #[test]
    fn grazing_obstacle_fails_penetration() {
        let (p, mut traj) = hover_problem();
        // node 10 sits 5 mm inside the sphere
        traj.states[10][0] = 2.0 + 5e-3;
        let r = check_success(&p, &traj, &SuccessThresholds::default()).unwrap();
        assert!((r.penetration - 5e-3).abs() < 1e-12);
        assert!(!r.penetration_ok && !r.success);
    }

    #[test]
    fn nominal_line_through_obstacle_is_flagged() {
        let task = QuadrotorTask::ablation();
        let p = build_quadrotor_problem(&task).unwrap();
        let nom = quadrotor_nominal(&p, &task.params);
        assert!(max_penetration(&p, &nom) > 0.5);
        assert!(nom.states.iter().all(|x| x[POS].len() == 3));
    }
}
