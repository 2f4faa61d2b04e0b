//! Sequential convex programming driver: linearize, solve the convex
//! subproblem with ADMM, take the full step, repeat.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admm::{admm_solve, AdmmConfig, AdmmError, AdmmState, Penalties, Residuals};
use crate::ocp::{dynamics_defect, quadratize_cost, NodeCost, NodeLinearization, OcpError, OcpProblem, Trajectory};
use crate::prox::ConvexSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScpError {
    #[error("inner solver failed at outer iteration {iteration}: {source}")]
    InnerSolverFailure { iteration: usize, source: AdmmError },
    #[error(transparent)]
    Problem(#[from] OcpError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// One convex subproblem around a nominal trajectory.
#[derive(Debug, Clone)]
pub struct QpData {
    pub nominal: Trajectory,
    /// `N` affine dynamics models.
    pub linearizations: Vec<NodeLinearization>,
    /// `N+1` quadratic costs; the last has an empty control block.
    pub costs: Vec<NodeCost>,
    pub x_init: Vec<f64>,
    pub terminal_indices: Vec<usize>,
    pub x_target: Vec<f64>,
    /// Path sets (physical and trust region) followed by the boundary fixes,
    /// as seen by the geometric layer.
    pub geometric_state_sets: Vec<ConvexSet>,
    pub geometric_control_sets: Vec<ConvexSet>,
}

impl QpData {
    /// Appends the boundary conditions to the given path sets and checks all
    /// dimensions.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        nominal: Trajectory,
        linearizations: Vec<NodeLinearization>,
        costs: Vec<NodeCost>,
        state_sets: Vec<ConvexSet>,
        control_sets: Vec<ConvexSet>,
        x_init: Vec<f64>,
        terminal_indices: Vec<usize>,
        x_target: Vec<f64>,
    ) -> Result<Self, OcpError> {
        let n = linearizations.len();
        let bad = |m: &str| Err(OcpError::ShapeMismatch(m.to_string()));
        if n == 0 || costs.len() != n + 1 || state_sets.len() != n + 1 || control_sets.len() != n {
            return bad("QP needs N linearizations, N+1 costs and state sets, N control sets");
        }
        let nx = x_init.len();
        let nu = linearizations[0].b.cols();
        for (l, c) in linearizations.iter().zip(&costs) {
            if l.a.rows() != nx || l.a.cols() != nx || l.b.rows() != nx || l.b.cols() != nu || l.d.len() != nx {
                return bad("linearization block sizes");
            }
            if c.state_weight.rows() != nx || c.control_weight.rows() != nu || c.state_linear.len() != nx {
                return bad("cost block sizes");
            }
        }
        if terminal_indices.len() != x_target.len() {
            return bad("terminal selector and target sizes differ");
        }
        let mut geometric_state_sets = state_sets;
        geometric_state_sets[0] = ConvexSet::fix(x_init.iter().copied().enumerate().collect());
        let terminal = ConvexSet::fix(terminal_indices.iter().copied().zip(x_target.iter().copied()).collect());
        let last = std::mem::replace(&mut geometric_state_sets[n], ConvexSet::free());
        geometric_state_sets[n] = last.and(terminal);
        for s in &geometric_state_sets {
            s.validate(nx)?;
        }
        for s in &control_sets {
            s.validate(nu)?;
        }
        Ok(Self {
            nominal,
            linearizations,
            costs,
            x_init,
            terminal_indices,
            x_target,
            geometric_state_sets,
            geometric_control_sets: control_sets,
        })
    }

    pub fn horizon(&self) -> usize {
        self.linearizations.len()
    }

    pub fn n_x(&self) -> usize {
        self.x_init.len()
    }

    pub fn n_u(&self) -> usize {
        self.linearizations[0].b.cols()
    }

    /// Quadratic objective of the subproblem at `traj`.
    pub fn objective(&self, traj: &Trajectory) -> f64 {
        let n = self.horizon();
        let mut v: f64 = (0..n).map(|i| self.costs[i].evaluate(&traj.states[i], &traj.controls[i])).sum();
        v += self.costs[n].evaluate(&traj.states[n], &[]);
        v
    }
}

/// Trust-region half-widths per coordinate; non-finite entries leave that
/// coordinate unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustRadii {
    pub state: Vec<f64>,
    pub control: Vec<f64>,
}

impl TrustRadii {
    pub fn unbounded(n_x: usize, n_u: usize) -> Self {
        Self { state: vec![f64::INFINITY; n_x], control: vec![f64::INFINITY; n_u] }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            state: self.state.iter().map(|r| r * s).collect(),
            control: self.control.iter().map(|r| r * s).collect(),
        }
    }
}

fn trust_box(center: &[f64], radii: &[f64]) -> ConvexSet {
    let idx: Vec<usize> = (0..center.len()).filter(|&k| radii[k].is_finite()).collect();
    if idx.is_empty() {
        return ConvexSet::free();
    }
    let lo = idx.iter().map(|&k| center[k] - radii[k]).collect();
    let hi = idx.iter().map(|&k| center[k] + radii[k]).collect();
    ConvexSet::box_on(idx, lo, hi)
}

/// Linearizes dynamics and quadratizes cost at `nominal`, and composes the
/// physical sets with the trust region around it.
pub fn build_qp(problem: &OcpProblem, nominal: &Trajectory, radii: &TrustRadii) -> Result<QpData, OcpError> {
    problem.check_shape(nominal)?;
    let n = problem.horizon;
    if radii.state.len() != problem.n_x() || radii.control.len() != problem.n_u() {
        return Err(OcpError::ShapeMismatch("trust radii dimensions".into()));
    }
    let mut lins = Vec::with_capacity(n);
    let mut costs = Vec::with_capacity(n + 1);
    for i in 0..n {
        let (x, u) = (&nominal.states[i], &nominal.controls[i]);
        lins.push(problem.linearize(i, x, u)?);
        costs.push(quadratize_cost(problem.cost.as_ref(), x, u, i, n)?);
    }
    costs.push(quadratize_cost(problem.cost.as_ref(), &nominal.states[n], &[], n, n)?);
    let state_sets = (0..=n)
        .map(|i| problem.state_sets[i].clone().and(trust_box(&nominal.states[i], &radii.state)))
        .collect();
    let control_sets = (0..n)
        .map(|i| problem.control_sets[i].clone().and(trust_box(&nominal.controls[i], &radii.control)))
        .collect();
    QpData::new(
        nominal.clone(),
        lins,
        costs,
        state_sets,
        control_sets,
        problem.x_init.clone(),
        problem.terminal_indices.clone(),
        problem.x_target.clone(),
    )
}

/// `ρ(k) = ρ0 (ρf/ρ0)^(k/(K−1))`; a single-iteration run uses `ρf`.
pub fn penalty_schedule(k: usize, outer_iterations: usize, rho0: f64, rhof: f64) -> f64 {
    if outer_iterations <= 1 {
        return rhof;
    }
    let t = k.min(outer_iterations - 1) as f64 / (outer_iterations - 1) as f64;
    rho0 * (rhof / rho0).powf(t)
}

/// Default nominal: `guess` if given, otherwise a linear interpolation from
/// `x_init` toward the terminal target with zero controls.
pub fn initialize_nominal(problem: &OcpProblem, guess: Option<&Trajectory>) -> Result<Trajectory, OcpError> {
    if let Some(g) = guess {
        problem.check_shape(g)?;
        return Ok(g.clone());
    }
    let n = problem.horizon;
    let mut end = problem.x_init.clone();
    for (&i, &v) in problem.terminal_indices.iter().zip(&problem.x_target) {
        end[i] = v;
    }
    let states = (0..=n)
        .map(|i| {
            let s = i as f64 / n as f64;
            problem.x_init.iter().zip(&end).map(|(a, b)| a + s * (b - a)).collect()
        })
        .collect();
    Ok(Trajectory { states, controls: vec![vec![0.0; problem.n_u()]; n] })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScpConfig {
    pub max_outer: usize,
    pub rho0: f64,
    pub rhof: f64,
    /// ADMM iterations per outer iteration.
    pub inner_iterations: usize,
    pub primal_tol: f64,
    pub dual_tol: f64,
    pub defect_tolerance: f64,
    pub cost_tolerance: f64,
    /// Stop as soon as the convergence test passes; otherwise run all
    /// `max_outer` iterations.
    pub early_stop: bool,
    /// Carry ADMM duals and auxiliaries across outer iterations.
    pub warm_start: bool,
    pub rho_eq: Option<f64>,
    pub rho_dyn: Option<f64>,
    pub rho_geo: Option<f64>,
}

impl Default for ScpConfig {
    fn default() -> Self {
        Self {
            max_outer: 20,
            rho0: 1e1,
            rhof: 1e3,
            inner_iterations: 100,
            primal_tol: 1e-5,
            dual_tol: 1e-5,
            defect_tolerance: 1e-2,
            cost_tolerance: 1e-4,
            early_stop: true,
            warm_start: true,
            rho_eq: None,
            rho_dyn: None,
            rho_geo: None,
        }
    }
}

impl ScpConfig {
    pub fn validate(&self) -> Result<(), ScpError> {
        let bad = |m: &str| Err(ScpError::InvalidConfig(m.to_string()));
        if self.max_outer == 0 || self.inner_iterations == 0 {
            return bad("iteration counts must be positive");
        }
        let all = [Some(self.rho0), Some(self.rhof), self.rho_eq, self.rho_dyn, self.rho_geo];
        if all.iter().flatten().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return bad("penalties must be positive and finite");
        }
        if self.rhof < self.rho0 {
            return bad("rho_final must not be below rho_initial");
        }
        Ok(())
    }

    /// Penalties at outer iteration `k`, with the per-layer overrides applied.
    pub fn penalties(&self, k: usize) -> Penalties {
        let rho = penalty_schedule(k, self.max_outer, self.rho0, self.rhof);
        Penalties {
            rho_eq: self.rho_eq.unwrap_or(rho),
            rho_dyn: self.rho_dyn.unwrap_or(rho),
            rho_geo: self.rho_geo.unwrap_or(rho),
        }
    }

    pub fn admm(&self, k: usize) -> AdmmConfig {
        AdmmConfig {
            penalties: self.penalties(k),
            max_iters: self.inner_iterations,
            primal_tol: self.primal_tol,
            dual_tol: self.dual_tol,
            ..AdmmConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iteration: usize,
    pub rho: Penalties,
    pub cost: f64,
    pub defect: f64,
    pub inner_iterations: usize,
    pub residuals: Residuals,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub trajectory: Trajectory,
    pub success: bool,
    pub termination: Termination,
    pub outer_iterations: usize,
    pub history: Vec<OuterRecord>,
    pub final_cost: f64,
    pub final_defect: f64,
    #[serde(skip)]
    pub admm_state: Option<AdmmState>,
}

/// Relative-change stall test over the last two outer iterations.
pub fn cost_stalled(history: &[OuterRecord], tol: f64) -> bool {
    match history {
        [.., a, b] => (b.cost - a.cost).abs() / a.cost.abs().max(1e-12) <= tol,
        _ => false,
    }
}

/// Solves from `guess` (or the default nominal) with fresh duals.
pub fn scp_solve(problem: &OcpProblem, guess: Option<&Trajectory>, radii: &TrustRadii, config: &ScpConfig) -> Result<SolveReport, ScpError> {
    let nominal = initialize_nominal(problem, guess)?;
    scp_solve_warm(problem, nominal, radii, config, None)
}

/// Solves from `nominal`, optionally seeding ADMM duals and auxiliaries.
pub fn scp_solve_warm(
    problem: &OcpProblem,
    mut nominal: Trajectory,
    radii: &TrustRadii,
    config: &ScpConfig,
    warm: Option<AdmmState>,
) -> Result<SolveReport, ScpError> {
    config.validate()?;
    problem.validate()?;
    problem.check_shape(&nominal)?;
    let mut history: Vec<OuterRecord> = Vec::new();
    let mut admm_state = warm;
    let mut termination = Termination::MaxIterations;
    for k in 0..config.max_outer {
        let qp = build_qp(problem, &nominal, radii)?;
        let warm_state = match admm_state.take() {
            Some(mut s) if config.warm_start => {
                s.restart_primal(&nominal);
                Some(s)
            }
            _ => None,
        };
        let admm_cfg = config.admm(k);
        let out = admm_solve(&qp, &admm_cfg, warm_state)
            .map_err(|source| ScpError::InnerSolverFailure { iteration: k, source })?;
        nominal = out.trajectory;
        let defect = dynamics_defect(problem, &nominal)?;
        let cost = problem.objective(&nominal);
        history.push(OuterRecord {
            iteration: k,
            rho: admm_cfg.penalties,
            cost,
            defect,
            inner_iterations: out.iterations,
            residuals: out.residuals,
        });
        admm_state = Some(out.state);
        if defect <= config.defect_tolerance && cost_stalled(&history, config.cost_tolerance) {
            termination = Termination::Converged;
            if config.early_stop {
                break;
            }
        }
    }
    let last = history.last().expect("at least one outer iteration");
    let (final_cost, final_defect) = (last.cost, last.defect);
    Ok(SolveReport {
        success: termination == Termination::Converged && final_defect <= config.defect_tolerance,
        termination,
        outer_iterations: history.len(),
        final_cost,
        final_defect,
        trajectory: nominal,
        history,
        admm_state,
    })
}
