//! Consensus ADMM over one linearized QP.
//!
//! Three variable layers per node: physical `(x, u)`, dynamic auxiliaries
//! `z` (copies of `x_i` for `i ≥ 1`, tied to the propagated dynamics of node
//! `i−1`), and geometric mirrors `(x̂, û)` that carry every set constraint.
//! One iteration is
//!
//! 1. per-node dense solve `H_i ξ_i = g_i` with cached Cholesky factors,
//! 2. closed-form weighted average for `z`,
//! 3. projections for `x̂`, `û`,
//! 4. dual ascent on all four consistency gaps.
//!
//! Steps 2 and 3 touch disjoint variables and may run in either order.
//! Within a step, nodes are independent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::{cholesky_factor, dist_inf, CholeskyFactor, DenseError, DenseMatrix};
use crate::ocp::Trajectory;
use crate::scp::QpData;

/// Iterate norm beyond which the solve is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdmmError {
    #[error("node {node} Hessian is not positive definite: {source}")]
    NotPositiveDefinite { node: usize, source: DenseError },
    #[error("iterate diverged at iteration {iteration} (norm {norm:e})")]
    NonFiniteIterate { iteration: usize, norm: f64 },
    #[error("linear solve failed at node {node}: {source}")]
    Solve { node: usize, source: DenseError },
    #[error("warm start does not match the QP dimensions")]
    WarmStartMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalties {
    pub rho_eq: f64,
    pub rho_dyn: f64,
    pub rho_geo: f64,
}

impl Penalties {
    pub fn uniform(rho: f64) -> Self {
        Self { rho_eq: rho, rho_dyn: rho, rho_geo: rho }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    pub penalties: Penalties,
    pub max_iters: usize,
    pub primal_tol: f64,
    pub dual_tol: f64,
    /// Run exactly `max_iters` iterations, ignoring the tolerances.
    pub fixed_iteration_mode: bool,
    /// Refactor every iteration instead of reusing the cached factors.
    pub refactor_each_iteration: bool,
    /// Keep per-iteration residuals in the outcome.
    pub record_trace: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            penalties: Penalties::uniform(1e2),
            max_iters: 2000,
            primal_tol: 1e-6,
            dual_tol: 1e-6,
            fixed_iteration_mode: false,
            refactor_each_iteration: false,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
}

/// Extra consensus term pulling `u_0` toward a shared value `w`:
/// `κᵀ(u_0 − w) + ½ρ‖u_0 − w‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlAnchor {
    pub rho: f64,
    pub target: Vec<f64>,
    pub dual: Vec<f64>,
}

/// All splitting variables of one ADMM solve.
///
/// `z`, `lambda` and `mu` are stored with `N+1` slots to keep node indexing
/// direct; slot 0 is unused and stays zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub x_hat: Vec<Vec<f64>>,
    pub u_hat: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub nu_x: Vec<Vec<f64>>,
    pub nu_u: Vec<Vec<f64>>,
    pub anchor: Option<ControlAnchor>,
}

impl AdmmState {
    /// Primal and auxiliary variables at `traj`, duals zero.
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let nx = traj.states[0].len();
        let nu = traj.controls.first().map_or(0, Vec::len);
        let n = traj.horizon();
        let mut z = traj.states.clone();
        z[0].fill(0.0);
        Self {
            x: traj.states.clone(),
            u: traj.controls.clone(),
            z,
            x_hat: traj.states.clone(),
            u_hat: traj.controls.clone(),
            lambda: vec![vec![0.0; nx]; n + 1],
            mu: vec![vec![0.0; nx]; n + 1],
            nu_x: vec![vec![0.0; nx]; n + 1],
            nu_u: vec![vec![0.0; nu]; n],
            anchor: None,
        }
    }

    /// Keeps duals and auxiliaries, restarts the primal layer at `traj`.
    pub fn restart_primal(&mut self, traj: &Trajectory) {
        self.x.clone_from(&traj.states);
        self.u.clone_from(&traj.controls);
    }

    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    /// Receding-horizon shift: drop node 0, repeat the last node.
    pub fn shifted(&self) -> Self {
        fn shift(layer: &[Vec<f64>]) -> Vec<Vec<f64>> {
            let mut out: Vec<Vec<f64>> = layer[1..].to_vec();
            out.push(layer[layer.len() - 1].clone());
            out
        }
        let mut s = Self {
            x: shift(&self.x),
            u: shift(&self.u),
            z: shift(&self.z),
            x_hat: shift(&self.x_hat),
            u_hat: shift(&self.u_hat),
            lambda: shift(&self.lambda),
            mu: shift(&self.mu),
            nu_x: shift(&self.nu_x),
            nu_u: shift(&self.nu_u),
            anchor: self.anchor.clone(),
        };
        for layer in [&mut s.z, &mut s.lambda, &mut s.mu] {
            layer[0].fill(0.0);
        }
        s
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory { states: self.x.clone(), controls: self.u.clone() }
    }

    fn matches(&self, qp: &QpData) -> bool {
        let n = qp.horizon();
        let nx = qp.n_x();
        let nu = qp.n_u();
        self.x.len() == n + 1
            && self.u.len() == n
            && self.z.len() == n + 1
            && self.x.iter().all(|v| v.len() == nx)
            && self.u.iter().all(|v| v.len() == nu)
            && self.nu_u.len() == n
    }

    fn max_norm(&self) -> f64 {
        let layers = [&self.x, &self.u, &self.z, &self.x_hat, &self.u_hat, &self.lambda, &self.mu, &self.nu_x, &self.nu_u];
        let mut m = 0.0_f64;
        for layer in layers {
            for v in layer.iter() {
                for &c in v {
                    if !c.is_finite() {
                        return f64::INFINITY;
                    }
                    m = m.max(c.abs());
                }
            }
        }
        m
    }
}

/// Node Hessian `H_i` per the four block formulas; the terminal node is the
/// state-only block `Q_N + (ρ_geo + ρ_eq) I`.
pub fn node_hessian(qp: &QpData, node: usize, rho: &Penalties, anchor_rho: Option<f64>) -> DenseMatrix {
    let nx = qp.n_x();
    let cost = &qp.costs[node];
    if node == qp.horizon() {
        let mut h = cost.state_weight.clone();
        h.add_diagonal(rho.rho_geo + rho.rho_eq);
        return h;
    }
    let nu = qp.n_u();
    let lin = &qp.linearizations[node];
    let eq = if node > 0 { rho.rho_eq } else { 0.0 };
    let mut h11 = cost.state_weight.add(&lin.a.tr_matmul(&lin.a).scaled(rho.rho_dyn));
    h11.add_diagonal(rho.rho_geo + eq);
    let h12 = cost.cross_weight.add(&lin.a.tr_matmul(&lin.b).scaled(rho.rho_dyn));
    let mut h22 = cost.control_weight.add(&lin.b.tr_matmul(&lin.b).scaled(rho.rho_dyn));
    h22.add_diagonal(rho.rho_geo);
    if node == 0 {
        if let Some(r) = anchor_rho {
            h22.add_diagonal(r);
        }
    }
    let mut h = DenseMatrix::zeros(nx + nu, nx + nu);
    h.set_block(0, 0, &h11);
    h.set_block(0, nx, &h12);
    h.set_block(nx, 0, &h12.transpose());
    h.set_block(nx, nx, &h22);
    // assembled blocks are symmetric up to rounding in AᵀA; make it exact
    h.symmetrized()
}

/// Assembles and factors all `N+1` node Hessians.
pub fn assemble_hessians(qp: &QpData, rho: &Penalties, anchor_rho: Option<f64>) -> Result<Vec<CholeskyFactor>, AdmmError> {
    (0..=qp.horizon())
        .map(|i| {
            cholesky_factor(&node_hessian(qp, i, rho, anchor_rho))
                .map_err(|source| AdmmError::NotPositiveDefinite { node: i, source })
        })
        .collect()
}

/// `A_i x_i + B_i u_i + d_i` for every interval, from the current primals.
pub fn propagated(state: &AdmmState, qp: &QpData) -> Vec<Vec<f64>> {
    (0..qp.horizon()).map(|i| qp.linearizations[i].propagate(&state.x[i], &state.u[i])).collect()
}

/// Step-1 right-hand side for node `i`.
pub fn node_rhs(state: &AdmmState, qp: &QpData, node: usize, rho: &Penalties) -> Vec<f64> {
    let n = qp.horizon();
    let nx = qp.n_x();
    let cost = &qp.costs[node];
    let mut gx: Vec<f64> = (0..nx)
        .map(|k| -cost.state_linear[k] - state.nu_x[node][k] + rho.rho_geo * state.x_hat[node][k])
        .collect();
    if node > 0 {
        for k in 0..nx {
            gx[k] += rho.rho_eq * state.z[node][k] - state.lambda[node][k];
        }
    }
    if node == n {
        return gx;
    }
    let lin = &qp.linearizations[node];
    // downstream pull μ_{i+1} + ρ_dyn (z_{i+1} − d_i)
    let pull: Vec<f64> = (0..nx)
        .map(|k| state.mu[node + 1][k] + rho.rho_dyn * (state.z[node + 1][k] - lin.d[k]))
        .collect();
    lin.a.tr_matvec_acc(&pull, &mut gx);
    let nu = qp.n_u();
    let mut gu: Vec<f64> = (0..nu)
        .map(|k| -cost.control_linear[k] - state.nu_u[node][k] + rho.rho_geo * state.u_hat[node][k])
        .collect();
    lin.b.tr_matvec_acc(&pull, &mut gu);
    if node == 0 {
        if let Some(a) = &state.anchor {
            for k in 0..nu {
                gu[k] += a.rho * a.target[k] - a.dual[k];
            }
        }
    }
    gx.extend(gu);
    gx
}

/// Step 1 for one node; returns `(x_i, u_i)` without writing them.
pub fn solve_node(state: &AdmmState, qp: &QpData, factors: &[CholeskyFactor], node: usize, rho: &Penalties) -> Result<Vec<f64>, AdmmError> {
    let mut g = node_rhs(state, qp, node, rho);
    factors[node].solve_in_place(&mut g).map_err(|source| AdmmError::Solve { node, source })?;
    Ok(g)
}

/// Step 1: physical layer, in the given node order.
pub fn primal_update_ordered(
    state: &mut AdmmState,
    qp: &QpData,
    factors: &[CholeskyFactor],
    rho: &Penalties,
    order: &[usize],
) -> Result<(), AdmmError> {
    let nx = qp.n_x();
    // all nodes read the same snapshot of auxiliaries and duals, never the primals
    let mut solved: Vec<(usize, Vec<f64>)> = Vec::with_capacity(order.len());
    for &i in order {
        solved.push((i, solve_node(state, qp, factors, i, rho)?));
    }
    for (i, xi) in solved {
        state.x[i].copy_from_slice(&xi[..nx]);
        if i < qp.horizon() {
            state.u[i].copy_from_slice(&xi[nx..]);
        }
    }
    Ok(())
}

pub fn primal_update(state: &mut AdmmState, qp: &QpData, factors: &[CholeskyFactor], rho: &Penalties) -> Result<(), AdmmError> {
    let order: Vec<usize> = (0..=qp.horizon()).collect();
    primal_update_ordered(state, qp, factors, rho, &order)
}

/// Step 2: `z_i = [ρ_eq x_i + λ_i + ρ_dyn d_dyn,i−1 − μ_i] / (ρ_eq + ρ_dyn)`.
pub fn dynamic_update(state: &mut AdmmState, qp: &QpData, rho_eq: f64, rho_dyn: f64) {
    let prop = propagated(state, qp);
    let denom = rho_eq + rho_dyn;
    for i in 1..=qp.horizon() {
        let dd = &prop[i - 1];
        for k in 0..qp.n_x() {
            state.z[i][k] = (rho_eq * state.x[i][k] + state.lambda[i][k] + rho_dyn * dd[k] - state.mu[i][k]) / denom;
        }
    }
}

/// Step 3: `x̂_i = P(x_i + ν_x,i/ρ_geo)`, `û_i = P(u_i + ν_u,i/ρ_geo)`.
pub fn geometric_update(state: &mut AdmmState, qp: &QpData, rho_geo: f64) {
    for i in 0..=qp.horizon() {
        for k in 0..qp.n_x() {
            state.x_hat[i][k] = state.x[i][k] + state.nu_x[i][k] / rho_geo;
        }
        // sets were validated against the QP dimensions at construction
        qp.geometric_state_sets[i].project_in_place(&mut state.x_hat[i]).expect("validated state set");
    }
    for i in 0..qp.horizon() {
        for k in 0..qp.n_u() {
            state.u_hat[i][k] = state.u[i][k] + state.nu_u[i][k] / rho_geo;
        }
        qp.geometric_control_sets[i].project_in_place(&mut state.u_hat[i]).expect("validated control set");
    }
}

/// Step 4: dual ascent on every consistency gap.
pub fn dual_update(state: &mut AdmmState, qp: &QpData, rho: &Penalties) {
    let prop = propagated(state, qp);
    let n = qp.horizon();
    for i in 0..=n {
        for k in 0..qp.n_x() {
            state.nu_x[i][k] += rho.rho_geo * (state.x[i][k] - state.x_hat[i][k]);
            if i > 0 {
                state.lambda[i][k] += rho.rho_eq * (state.x[i][k] - state.z[i][k]);
                state.mu[i][k] += rho.rho_dyn * (state.z[i][k] - prop[i - 1][k]);
            }
        }
    }
    for i in 0..n {
        for k in 0..qp.n_u() {
            state.nu_u[i][k] += rho.rho_geo * (state.u[i][k] - state.u_hat[i][k]);
        }
    }
}

/// Largest ∞-norm over the four consensus/dynamic gaps.
pub fn primal_gap(state: &AdmmState, qp: &QpData) -> f64 {
    let prop = propagated(state, qp);
    let n = qp.horizon();
    let mut r = 0.0_f64;
    for i in 0..=n {
        r = r.max(dist_inf(&state.x[i], &state.x_hat[i]));
        if i > 0 {
            r = r.max(dist_inf(&state.x[i], &state.z[i]));
            r = r.max(dist_inf(&state.z[i], &prop[i - 1]));
        }
    }
    for i in 0..n {
        r = r.max(dist_inf(&state.u[i], &state.u_hat[i]));
    }
    r
}

/// Primal gaps of `curr` and the ρ-scaled auxiliary change since `prev`.
pub fn compute_residuals(prev: &AdmmState, curr: &AdmmState, qp: &QpData, rho: &Penalties) -> Residuals {
    Residuals { primal: primal_gap(curr, qp), dual: AuxSnapshot::take(prev).dual_residual(curr, rho) }
}

/// Auxiliary snapshot needed for the dual residual.
#[derive(Debug, Clone)]
struct AuxSnapshot {
    z: Vec<Vec<f64>>,
    x_hat: Vec<Vec<f64>>,
    u_hat: Vec<Vec<f64>>,
}

impl AuxSnapshot {
    fn take(s: &AdmmState) -> Self {
        Self { z: s.z.clone(), x_hat: s.x_hat.clone(), u_hat: s.u_hat.clone() }
    }

    fn dual_residual(&self, s: &AdmmState, rho: &Penalties) -> f64 {
        let mut dual = 0.0_f64;
        for (a, b) in self.x_hat.iter().zip(&s.x_hat) {
            dual = dual.max(rho.rho_geo * dist_inf(a, b));
        }
        for (a, b) in self.z.iter().zip(&s.z).skip(1) {
            dual = dual.max(rho.rho_eq.max(rho.rho_dyn) * dist_inf(a, b));
        }
        for (a, b) in self.u_hat.iter().zip(&s.u_hat) {
            dual = dual.max(rho.rho_geo * dist_inf(a, b));
        }
        dual
    }
}

/// Steps 1–3 of one iteration; returns the dual residual of the auxiliary
/// change. Step 4 is left to the caller so extra consensus layers can slot in.
pub fn auxiliary_steps(state: &mut AdmmState, qp: &QpData, factors: &[CholeskyFactor], rho: &Penalties) -> Result<f64, AdmmError> {
    let snap = AuxSnapshot::take(state);
    primal_update(state, qp, factors, rho)?;
    dynamic_update(state, qp, rho.rho_eq, rho.rho_dyn);
    geometric_update(state, qp, rho.rho_geo);
    Ok(snap.dual_residual(state, rho))
}

/// Divergence guard over every layer.
pub fn check_divergence(state: &AdmmState, iteration: usize) -> Result<(), AdmmError> {
    let norm = state.max_norm();
    if norm <= DIVERGENCE_LIMIT {
        Ok(())
    } else {
        Err(AdmmError::NonFiniteIterate { iteration, norm })
    }
}

#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    pub trajectory: Trajectory,
    pub residuals: Residuals,
    pub iterations: usize,
    pub converged: bool,
    pub state: AdmmState,
    pub trace: Vec<Residuals>,
}

/// Runs Steps 1–4 from `warm` (or from the QP's nominal with zero duals).
pub fn admm_solve(qp: &QpData, config: &AdmmConfig, warm: Option<AdmmState>) -> Result<AdmmOutcome, AdmmError> {
    let mut state = match warm {
        Some(s) => {
            if !s.matches(qp) {
                return Err(AdmmError::WarmStartMismatch);
            }
            s
        }
        None => AdmmState::from_trajectory(&qp.nominal),
    };
    let rho = config.penalties;
    let anchor_rho = state.anchor.as_ref().map(|a| a.rho);
    let mut factors = assemble_hessians(qp, &rho, anchor_rho)?;
    let mut trace = Vec::new();
    let mut residuals = Residuals::default();
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=config.max_iters.max(1) {
        if config.refactor_each_iteration && it > 1 {
            factors = assemble_hessians(qp, &rho, anchor_rho)?;
        }
        let dual = auxiliary_steps(&mut state, qp, &factors, &rho)?;
        dual_update(&mut state, qp, &rho);
        iterations = it;

        check_divergence(&state, it)?;
        residuals = Residuals { primal: primal_gap(&state, qp), dual };
        if config.record_trace {
            trace.push(residuals);
        }
        if residuals.primal <= config.primal_tol && residuals.dual <= config.dual_tol {
            converged = true;
            if !config.fixed_iteration_mode {
                break;
            }
        } else {
            converged = false;
        }
    }
    Ok(AdmmOutcome { trajectory: state.trajectory(), residuals, iterations, converged, state, trace })
}
