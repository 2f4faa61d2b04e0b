//! The nonlinear optimal control problem and its local approximations.
//!
//! Continuous dynamics are discretized with classical RK4 (control held over
//! the step). Linearizations differentiate the discrete map, so the stage
//! coupling of the integrator is captured exactly as it is integrated.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::{dist2, DenseMatrix};
use crate::prox::{ConvexSet, ProxError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcpError {
    #[error("integration produced a non-finite value in RK4 stage {stage}")]
    NonFiniteState { stage: usize },
    #[error("non-finite Jacobian at node {node}")]
    NonFiniteJacobian { node: usize },
    #[error("non-finite cost derivative at node {node}")]
    NonFiniteCost { node: usize },
    #[error("trajectory shape does not match problem: {0}")]
    ShapeMismatch(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Set(#[from] ProxError),
}

/// Continuous-time vector field `ẋ = f(x, u)`.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn derivative(&self, x: &[f64], u: &[f64], dx: &mut [f64]);

    /// Applied after each integration step of a physical rollout.
    fn normalize_state(&self, _x: &mut [f64]) {}

    /// Analytic Jacobians `(A, B)` of the RK4-discretized map, if the model has them.
    fn discrete_jacobian(&self, _x: &[f64], _u: &[f64], _dt: f64) -> Option<(DenseMatrix, DenseMatrix)> {
        None
    }
}

/// Running cost `ℓ_i(x, u)` and terminal cost `φ(x)`.
pub trait Cost: Send + Sync {
    fn running(&self, node: usize, x: &[f64], u: &[f64]) -> f64;
    fn terminal(&self, x: &[f64]) -> f64;

    /// Exact second-order model of the running cost, when available.
    fn quadratize_running(&self, _node: usize, _x: &[f64], _u: &[f64]) -> Option<NodeCost> {
        None
    }

    /// Exact second-order model of the terminal cost, when available.
    fn quadratize_terminal(&self, _x: &[f64]) -> Option<NodeCost> {
        None
    }
}

/// Linear plant `ẋ = F x + G u`.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    pub f: DenseMatrix,
    pub g: DenseMatrix,
}

impl Dynamics for LinearPlant {
    fn state_dim(&self) -> usize {
        self.f.rows()
    }

    fn control_dim(&self) -> usize {
        self.g.cols()
    }

    fn derivative(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        self.f.matvec_into(x, dx);
        let gu = self.g.matvec(u);
        for (d, v) in dx.iter_mut().zip(gu) {
            *d += v;
        }
    }

    /// RK4 applied to a linear field is the degree-4 Taylor polynomial of the
    /// exponential: `A = Σ (hF)^k/k!`, `B = h Σ (hF)^k/(k+1)! G`.
    fn discrete_jacobian(&self, _x: &[f64], _u: &[f64], dt: f64) -> Option<(DenseMatrix, DenseMatrix)> {
        let n = self.f.rows();
        let hf = self.f.scaled(dt);
        let mut a = DenseMatrix::identity(n);
        let mut phi = DenseMatrix::identity(n);
        let mut power = DenseMatrix::identity(n);
        let mut fact = 1.0;
        for k in 1..=4 {
            power = power.matmul(&hf);
            fact *= k as f64;
            a = a.add(&power.scaled(1.0 / fact));
            if k < 4 {
                phi = phi.add(&power.scaled(1.0 / (fact * (k + 1) as f64)));
            }
        }
        Some((a, phi.matmul(&self.g).scaled(dt)))
    }
}

/// Tracking-style quadratic cost:
/// `ℓ = ½(x−x_ref)ᵀQ(x−x_ref) + ½(u−u_ref)ᵀR(u−u_ref) + qᵀx + rᵀu`,
/// `φ = ½(x−x_term)ᵀQ_N(x−x_term) + q_Nᵀx`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticCost {
    pub state_weight: DenseMatrix,
    pub control_weight: DenseMatrix,
    pub state_ref: Vec<f64>,
    pub control_ref: Vec<f64>,
    pub state_linear: Vec<f64>,
    pub control_linear: Vec<f64>,
    pub terminal_weight: DenseMatrix,
    pub terminal_ref: Vec<f64>,
    pub terminal_linear: Vec<f64>,
}

impl QuadraticCost {
    /// Diagonal weights, zero references, zero linear terms.
    pub fn diagonal(state: &[f64], control: &[f64], terminal: &[f64]) -> Self {
        let nx = state.len();
        let nu = control.len();
        Self {
            state_weight: DenseMatrix::from_diagonal(state),
            control_weight: DenseMatrix::from_diagonal(control),
            state_ref: vec![0.0; nx],
            control_ref: vec![0.0; nu],
            state_linear: vec![0.0; nx],
            control_linear: vec![0.0; nu],
            terminal_weight: DenseMatrix::from_diagonal(terminal),
            terminal_ref: vec![0.0; nx],
            terminal_linear: vec![0.0; nx],
        }
    }

    fn quad(w: &DenseMatrix, v: &[f64], r: &[f64]) -> f64 {
        let e: Vec<f64> = v.iter().zip(r).map(|(a, b)| a - b).collect();
        0.5 * crate::dense::dot(&e, &w.matvec(&e))
    }
}

impl Cost for QuadraticCost {
    fn running(&self, _node: usize, x: &[f64], u: &[f64]) -> f64 {
        Self::quad(&self.state_weight, x, &self.state_ref)
            + Self::quad(&self.control_weight, u, &self.control_ref)
            + crate::dense::dot(&self.state_linear, x)
            + crate::dense::dot(&self.control_linear, u)
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        Self::quad(&self.terminal_weight, x, &self.terminal_ref) + crate::dense::dot(&self.terminal_linear, x)
    }

    fn quadratize_running(&self, _node: usize, _x: &[f64], _u: &[f64]) -> Option<NodeCost> {
        let q = self.state_weight.matvec(&self.state_ref);
        let r = self.control_weight.matvec(&self.control_ref);
        Some(NodeCost {
            state_weight: self.state_weight.clone(),
            control_weight: self.control_weight.clone(),
            cross_weight: DenseMatrix::zeros(self.state_ref.len(), self.control_ref.len()),
            state_linear: self.state_linear.iter().zip(q).map(|(l, v)| l - v).collect(),
            control_linear: self.control_linear.iter().zip(r).map(|(l, v)| l - v).collect(),
        })
    }

    fn quadratize_terminal(&self, _x: &[f64]) -> Option<NodeCost> {
        let q = self.terminal_weight.matvec(&self.terminal_ref);
        Some(NodeCost::terminal(
            self.terminal_weight.clone(),
            self.terminal_linear.iter().zip(q).map(|(l, v)| l - v).collect(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn zeros(n_x: usize, n_u: usize, horizon: usize) -> Self {
        Self { states: vec![vec![0.0; n_x]; horizon + 1], controls: vec![vec![0.0; n_u]; horizon] }
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().chain(&self.controls).all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// `max_i ‖Δx_i‖∞` and `‖Δu_i‖∞` combined.
    pub fn distance_inf(&self, other: &Trajectory) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .chain(self.controls.iter().zip(&other.controls))
            .map(|(a, b)| crate::dense::dist_inf(a, b))
            .fold(0.0, f64::max)
    }
}

/// First-order model `x⁺ ≈ A x + B u + d` of the discrete dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLinearization {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
    pub d: Vec<f64>,
}

impl NodeLinearization {
    /// `A x + B u + d`.
    pub fn propagate(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = self.a.matvec(x);
        let bu = self.b.matvec(u);
        for ((o, b), d) in out.iter_mut().zip(bu).zip(&self.d) {
            *o += b + d;
        }
        out
    }
}

/// Second-order cost model
/// `½xᵀQx + qᵀx + ½uᵀRu + xᵀMu + rᵀu` in absolute coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCost {
    pub state_weight: DenseMatrix,
    pub control_weight: DenseMatrix,
    pub cross_weight: DenseMatrix,
    pub state_linear: Vec<f64>,
    pub control_linear: Vec<f64>,
}

impl NodeCost {
    pub fn terminal(state_weight: DenseMatrix, state_linear: Vec<f64>) -> Self {
        let nx = state_linear.len();
        Self {
            state_weight,
            control_weight: DenseMatrix::zeros(0, 0),
            cross_weight: DenseMatrix::zeros(nx, 0),
            state_linear,
            control_linear: Vec::new(),
        }
    }

    pub fn evaluate(&self, x: &[f64], u: &[f64]) -> f64 {
        use crate::dense::dot;
        let mut v = 0.5 * dot(x, &self.state_weight.matvec(x)) + dot(&self.state_linear, x);
        if !u.is_empty() {
            v += 0.5 * dot(u, &self.control_weight.matvec(u))
                + dot(x, &self.cross_weight.matvec(u))
                + dot(&self.control_linear, u);
        }
        v
    }
}

/// Full problem: dynamics, costs, boundary conditions, path sets, horizon.
#[derive(Clone)]
pub struct OcpProblem {
    pub dynamics: Arc<dyn Dynamics>,
    pub cost: Arc<dyn Cost>,
    pub horizon: usize,
    pub dt: f64,
    pub x_init: Vec<f64>,
    /// Rows of the terminal selector `S`, as state indices.
    pub terminal_indices: Vec<usize>,
    pub x_target: Vec<f64>,
    /// `N+1` state sets.
    pub state_sets: Vec<ConvexSet>,
    /// `N` control sets.
    pub control_sets: Vec<ConvexSet>,
    /// Optional per-interval additive offsets to the discrete map (disturbances).
    pub discrete_offsets: Vec<Vec<f64>>,
}

impl std::fmt::Debug for OcpProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OcpProblem")
            .field("n_x", &self.n_x())
            .field("n_u", &self.n_u())
            .field("horizon", &self.horizon)
            .field("dt", &self.dt)
            .field("x_init", &self.x_init)
            .field("terminal_indices", &self.terminal_indices)
            .field("x_target", &self.x_target)
            .finish_non_exhaustive()
    }
}

impl OcpProblem {
    /// Problem with no path constraints.
    pub fn new(
        dynamics: Arc<dyn Dynamics>,
        cost: Arc<dyn Cost>,
        horizon: usize,
        dt: f64,
        x_init: Vec<f64>,
        terminal_indices: Vec<usize>,
        x_target: Vec<f64>,
    ) -> Self {
        Self {
            dynamics,
            cost,
            horizon,
            dt,
            x_init,
            terminal_indices,
            x_target,
            state_sets: vec![ConvexSet::free(); horizon + 1],
            control_sets: vec![ConvexSet::free(); horizon],
            discrete_offsets: Vec::new(),
        }
    }

    pub fn n_x(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn n_u(&self) -> usize {
        self.dynamics.control_dim()
    }

    pub fn validate(&self) -> Result<(), OcpError> {
        let bad = |m: String| Err(OcpError::InvalidProblem(m));
        let nx = self.n_x();
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.x_init.len() != nx {
            return bad(format!("x_init has {} entries, expected {nx}", self.x_init.len()));
        }
        if self.terminal_indices.len() > nx || self.terminal_indices.len() != self.x_target.len() {
            return bad("terminal selector and target must have matching sizes <= n_x".into());
        }
        let mut seen = vec![false; nx];
        for &i in &self.terminal_indices {
            if i >= nx || std::mem::replace(&mut seen[i], true) {
                return bad(format!("terminal selector row {i} is out of range or repeated"));
            }
        }
        if self.state_sets.len() != self.horizon + 1 || self.control_sets.len() != self.horizon {
            return bad("need N+1 state sets and N control sets".into());
        }
        if !self.discrete_offsets.is_empty()
            && (self.discrete_offsets.len() != self.horizon || self.discrete_offsets.iter().any(|o| o.len() != nx))
        {
            return bad("discrete offsets must be N vectors of length n_x".into());
        }
        for s in &self.state_sets {
            s.validate(nx)?;
        }
        for s in &self.control_sets {
            s.validate(self.n_u())?;
        }
        Ok(())
    }

    pub fn check_shape(&self, traj: &Trajectory) -> Result<(), OcpError> {
        let ok = traj.states.len() == self.horizon + 1
            && traj.controls.len() == self.horizon
            && traj.states.iter().all(|x| x.len() == self.n_x())
            && traj.controls.iter().all(|u| u.len() == self.n_u());
        if ok {
            Ok(())
        } else {
            Err(OcpError::ShapeMismatch(format!(
                "expected {} states of dim {} and {} controls of dim {}",
                self.horizon + 1,
                self.n_x(),
                self.horizon,
                self.n_u()
            )))
        }
    }

    /// The discrete map `f_d,i` (RK4 plus any interval offset), unnormalized.
    pub fn discrete_step(&self, node: usize, x: &[f64], u: &[f64]) -> Result<Vec<f64>, OcpError> {
        let mut next = rk4_step(self.dynamics.as_ref(), x, u, self.dt)?;
        if let Some(off) = self.discrete_offsets.get(node) {
            for (n, o) in next.iter_mut().zip(off) {
                *n += o;
            }
        }
        Ok(next)
    }

    /// One step of a physical rollout: the discrete map followed by the
    /// model's state normalization.
    pub fn physical_step(&self, node: usize, x: &[f64], u: &[f64]) -> Result<Vec<f64>, OcpError> {
        let mut next = self.discrete_step(node, x, u)?;
        self.dynamics.normalize_state(&mut next);
        Ok(next)
    }

    /// Forward rollout of `controls` from `x_init`.
    pub fn rollout(&self, controls: &[Vec<f64>]) -> Result<Trajectory, OcpError> {
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(self.x_init.clone());
        for (i, u) in controls.iter().enumerate() {
            let next = self.physical_step(i, &states[i], u)?;
            states.push(next);
        }
        Ok(Trajectory { states, controls: controls.to_vec() })
    }

    pub fn linearize(&self, node: usize, x: &[f64], u: &[f64]) -> Result<NodeLinearization, OcpError> {
        let mut lin = linearize_node(self.dynamics.as_ref(), x, u, self.dt)
            .map_err(|_| OcpError::NonFiniteJacobian { node })?;
        if let Some(off) = self.discrete_offsets.get(node) {
            for (d, o) in lin.d.iter_mut().zip(off) {
                *d += o;
            }
        }
        Ok(lin)
    }

    /// Objective `φ(x_N) + Σ ℓ_i(x_i, u_i)`.
    pub fn objective(&self, traj: &Trajectory) -> f64 {
        let running: f64 = traj
            .controls
            .iter()
            .enumerate()
            .map(|(i, u)| self.cost.running(i, &traj.states[i], u))
            .sum();
        running + self.cost.terminal(&traj.states[self.horizon])
    }
}

/// Classical four-stage RK4 with the control held over the step.
pub fn rk4_step(f: &dyn Dynamics, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>, OcpError> {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let finite = |k: &[f64], stage| if k.iter().all(|v| v.is_finite()) { Ok(()) } else { Err(OcpError::NonFiniteState { stage }) };

    f.derivative(x, u, &mut k1);
    finite(&k1, 1)?;
    for j in 0..n {
        tmp[j] = x[j] + 0.5 * dt * k1[j];
    }
    f.derivative(&tmp, u, &mut k2);
    finite(&k2, 2)?;
    for j in 0..n {
        tmp[j] = x[j] + 0.5 * dt * k2[j];
    }
    f.derivative(&tmp, u, &mut k3);
    finite(&k3, 3)?;
    for j in 0..n {
        tmp[j] = x[j] + dt * k3[j];
    }
    f.derivative(&tmp, u, &mut k4);
    finite(&k4, 4)?;
    let out: Vec<f64> = (0..n).map(|j| x[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])).collect();
    finite(&out, 4)?;
    Ok(out)
}

/// Central-difference step for coordinate value `v`.
pub fn fd_step(v: f64) -> f64 {
    f64::EPSILON.cbrt() * v.abs().max(1.0)
}

/// Jacobians of the RK4 map at `(x̄, ū)` and the residual
/// `d = f_d(x̄,ū) − A x̄ − B ū`.
pub fn linearize_node(f: &dyn Dynamics, x: &[f64], u: &[f64], dt: f64) -> Result<NodeLinearization, OcpError> {
    let nx = x.len();
    let nu = u.len();
    let fx = rk4_step(f, x, u, dt)?;
    let (a, b) = match f.discrete_jacobian(x, u, dt) {
        Some(ab) => ab,
        None => {
            let mut a = DenseMatrix::zeros(nx, nx);
            let mut b = DenseMatrix::zeros(nx, nu);
            let mut xp = x.to_vec();
            for j in 0..nx {
                let h = fd_step(x[j]);
                xp[j] = x[j] + h;
                let plus = rk4_step(f, &xp, u, dt)?;
                xp[j] = x[j] - h;
                let minus = rk4_step(f, &xp, u, dt)?;
                xp[j] = x[j];
                let col: Vec<f64> = plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect();
                a.set_column(j, &col);
            }
            let mut up = u.to_vec();
            for j in 0..nu {
                let h = fd_step(u[j]);
                up[j] = u[j] + h;
                let plus = rk4_step(f, x, &up, dt)?;
                up[j] = u[j] - h;
                let minus = rk4_step(f, x, &up, dt)?;
                up[j] = u[j];
                let col: Vec<f64> = plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect();
                b.set_column(j, &col);
            }
            (a, b)
        }
    };
    if !a.is_finite() || !b.is_finite() {
        return Err(OcpError::NonFiniteJacobian { node: 0 });
    }
    let ax = a.matvec(x);
    let bu = b.matvec(u);
    let d = (0..nx).map(|k| fx[k] - ax[k] - bu[k]).collect();
    Ok(NodeLinearization { a, b, d })
}

/// Second-order model of the node cost at `(x̄, ū)`; node `horizon` uses the
/// terminal cost. Exact when the cost provides it, otherwise finite
/// differences with eigenvalue clamping (`Q` at 0, `R` at 1e-8).
pub fn quadratize_cost(cost: &dyn Cost, x: &[f64], u: &[f64], node: usize, horizon: usize) -> Result<NodeCost, OcpError> {
    let exact = if node == horizon { cost.quadratize_terminal(x) } else { cost.quadratize_running(node, x, u) };
    if let Some(c) = exact {
        return Ok(c);
    }
    let nx = x.len();
    let nu = if node == horizon { 0 } else { u.len() };
    let mut z: Vec<f64> = x.iter().chain(&u[..nu]).copied().collect();
    let n = z.len();
    let eval = |z: &[f64]| if node == horizon { cost.terminal(&z[..nx]) } else { cost.running(node, &z[..nx], &z[nx..]) };

    let mut grad = vec![0.0; n];
    for j in 0..n {
        let h = fd_step(z[j]);
        let z0 = z[j];
        z[j] = z0 + h;
        let p = eval(&z);
        z[j] = z0 - h;
        let m = eval(&z);
        z[j] = z0;
        grad[j] = (p - m) / (2.0 * h);
    }
    let mut hess = DenseMatrix::zeros(n, n);
    let hs: Vec<f64> = z.iter().map(|v| f64::EPSILON.powf(0.25) * v.abs().max(1.0)).collect();
    for j in 0..n {
        for k in j..n {
            let (hj, hk) = (hs[j], hs[k]);
            let mut f4 = [0.0; 4];
            for (slot, (sj, sk)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)].into_iter().enumerate() {
                let mut w = z.clone();
                w[j] += sj * hj;
                w[k] += sk * hk;
                f4[slot] = eval(&w);
            }
            let v = (f4[0] - f4[1] - f4[2] + f4[3]) / (4.0 * hj * hk);
            hess[(j, k)] = v;
            hess[(k, j)] = v;
        }
    }
    if !hess.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(OcpError::NonFiniteCost { node });
    }
    let q = clamp_eigenvalues(&hess.block(0, 0, nx, nx), 0.0);
    let r = clamp_eigenvalues(&hess.block(nx, nx, nu, nu), 1e-8);
    let m = hess.block(0, nx, nx, nu);
    // linear terms so that the model matches value slope at z̄ in absolute coordinates
    let hz = DenseMatrix::from_fn(n, n, |i, j| {
        if i < nx && j < nx {
            q[(i, j)]
        } else if i >= nx && j >= nx {
            r[(i - nx, j - nx)]
        } else if i < nx {
            m[(i, j - nx)]
        } else {
            m[(j, i - nx)]
        }
    })
    .matvec(&z);
    let lin: Vec<f64> = grad.iter().zip(hz).map(|(g, h)| g - h).collect();
    Ok(NodeCost {
        state_weight: q,
        control_weight: r,
        cross_weight: m,
        state_linear: lin[..nx].to_vec(),
        control_linear: lin[nx..].to_vec(),
    })
}

/// Symmetric eigenvalue clamp `V max(Λ, floor) Vᵀ`.
pub fn clamp_eigenvalues(h: &DenseMatrix, floor: f64) -> DenseMatrix {
    let n = h.rows();
    if n == 0 {
        return h.clone();
    }
    let sym = h.symmetrized();
    let m = DMatrix::from_row_slice(n, n, sym.as_slice());
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return sym;
    }
    let lam = eig.eigenvalues.map(|l| l.max(floor));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&lam) * eig.eigenvectors.transpose();
    DenseMatrix::from_fn(n, n, |i, j| 0.5 * (rebuilt[(i, j)] + rebuilt[(j, i)]))
}

/// Mean over intervals of `‖x_{i+1} − f_d(x_i, u_i)‖₂`, with the model's
/// post-step normalization applied to `f_d`.
pub fn dynamics_defect(problem: &OcpProblem, traj: &Trajectory) -> Result<f64, OcpError> {
    problem.check_shape(traj)?;
    let mut total = 0.0;
    for i in 0..problem.horizon {
        let next = problem.physical_step(i, &traj.states[i], &traj.controls[i])?;
        total += dist2(&traj.states[i + 1], &next);
    }
    Ok(total / problem.horizon as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Zero(usize, usize);
    impl Dynamics for Zero {
        fn state_dim(&self) -> usize {
            self.0
        }
        fn control_dim(&self) -> usize {
            self.1
        }
        fn derivative(&self, _x: &[f64], _u: &[f64], dx: &mut [f64]) {
            dx.fill(0.0);
        }
    }

    struct Exponential;
    impl Dynamics for Exponential {
        fn state_dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn derivative(&self, x: &[f64], _u: &[f64], dx: &mut [f64]) {
            dx[0] = x[0];
        }
    }

    struct Blowup;
    impl Dynamics for Blowup {
        fn state_dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            0
        }
        fn derivative(&self, x: &[f64], _u: &[f64], dx: &mut [f64]) {
            dx[0] = 1.0 / (x[0] - 1.0);
        }
    }

    /// Smooth non-quadratic cost for the finite-difference path.
    struct Wavy;
    impl Cost for Wavy {
        fn running(&self, _node: usize, x: &[f64], u: &[f64]) -> f64 {
            x[0].sin() * x[1] + (0.5 * u[0]).cosh() + x[1].powi(4) + x[0] * u[0]
        }
        fn terminal(&self, x: &[f64]) -> f64 {
            (x[0] - 1.0).powi(2) + x[1].exp()
        }
    }

    fn double_integrator() -> LinearPlant {
        LinearPlant {
            f: DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]),
            g: DenseMatrix::from_rows(&[vec![0.0], vec![1.0]]),
        }
    }

    #[test]
    fn zero_field_leaves_state() {
        let x = [1.5, -2.0, 3.0];
        assert_eq!(rk4_step(&Zero(3, 1), &x, &[0.0], 0.3).unwrap(), x.to_vec());
    }

    #[test]
    fn rk4_of_exponential_matches_taylor() {
        let h: f64 = 0.1;
        let x = rk4_step(&Exponential, &[1.0], &[0.0], h).unwrap()[0];
        let taylor = 1.0 + h + h * h / 2.0 + h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((x - taylor).abs() < 1e-15);
        assert!((x - 1.105_170_833).abs() < 1e-9);
    }

    #[test]
    fn nonfinite_stage_is_reported() {
        assert!(matches!(rk4_step(&Blowup, &[1.0], &[], 0.1), Err(OcpError::NonFiniteState { stage: 1 })));
    }

    #[test]
    fn linear_plant_linearization_is_exact() {
        let p = double_integrator();
        let lin = linearize_node(&p, &[0.0, 0.0], &[0.0], 0.1).unwrap();
        // exact discretization of the double integrator
        let expect_a = [1.0, 0.1, 0.0, 1.0];
        let expect_b = [0.005, 0.1];
        for (a, e) in lin.a.as_slice().iter().zip(expect_a) {
            assert!((a - e).abs() < 1e-9);
        }
        for (b, e) in lin.b.as_slice().iter().zip(expect_b) {
            assert!((b - e).abs() < 1e-9);
        }
        assert!(lin.d.iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn residual_reproduces_map_at_nominal() {
        let p = double_integrator();
        let (x, u) = ([0.3, -1.2], [0.7]);
        let lin = linearize_node(&p, &x, &u, 0.2).unwrap();
        let fx = rk4_step(&p, &x, &u, 0.2).unwrap();
        let prop = lin.propagate(&x, &u);
        assert!(dist2(&fx, &prop) < 1e-14);
    }

    #[test]
    fn quadratic_cost_is_exact() {
        let c = QuadraticCost::diagonal(&[1.0, 1.0], &[1.0], &[0.0, 0.0]);
        let nc = quadratize_cost(&c, &[0.0, 0.0], &[0.0], 0, 5).unwrap();
        assert_eq!(nc.state_weight, DenseMatrix::identity(2));
        assert_eq!(nc.control_weight, DenseMatrix::identity(1));
        assert_eq!(nc.cross_weight, DenseMatrix::zeros(2, 1));
        assert_eq!(nc.state_linear, vec![0.0, 0.0]);
        assert_eq!(nc.control_linear, vec![0.0]);

        let mut off = c.clone();
        off.state_ref = vec![2.0, -1.0];
        let nc = quadratize_cost(&off, &[0.0, 0.0], &[0.0], 0, 5).unwrap();
        assert_eq!(nc.state_linear, vec![-2.0, 1.0]);
    }

    #[test]
    fn finite_difference_gradient_matches_analytic() {
        let (x, u) = ([0.4, -0.3], [0.9]);
        let nc = quadratize_cost(&Wavy, &x, &u, 0, 3).unwrap();
        // model gradient at the expansion point: Q x + M u + q
        let gx: Vec<f64> = (0..2)
            .map(|i| nc.state_weight.row(i).iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + nc.cross_weight[(i, 0)] * u[0] + nc.state_linear[i])
            .collect();
        let gu = nc.control_weight[(0, 0)] * u[0] + nc.cross_weight[(0, 0)] * x[0] + nc.cross_weight[(1, 0)] * x[1] + nc.control_linear[0];
        let analytic_x = [x[0].cos() * x[1] + u[0], x[0].sin() + 4.0 * x[1].powi(3)];
        let analytic_u = 0.5 * (0.5 * u[0]).sinh() + x[0];
        // the Hessian at the point is PSD except possibly Q; gradient must match regardless
        assert!((gx[0] - analytic_x[0]).abs() < 1e-5, "{gx:?} vs {analytic_x:?}");
        assert!((gx[1] - analytic_x[1]).abs() < 1e-5);
        assert!((gu - analytic_u).abs() < 1e-5);
    }

    #[test]
    fn clamping_repairs_indefinite_hessian() {
        let h = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let c = clamp_eigenvalues(&h, 0.0);
        let m = DMatrix::from_row_slice(2, 2, c.as_slice());
        let eig = SymmetricEigen::new(m);
        assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-12));
        // eigenvalue 3 along (1,1)/√2 survives
        assert!((c[(0, 0)] - 1.5).abs() < 1e-12 && (c[(0, 1)] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn defect_of_rollout_and_perturbation() {
        let plant = Arc::new(double_integrator());
        let cost = Arc::new(QuadraticCost::diagonal(&[1.0, 1.0], &[1.0], &[0.0, 0.0]));
        let p = OcpProblem::new(plant, cost, 40, 0.1, vec![1.0, 0.0], vec![], vec![]);
        let controls: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.3).sin()]).collect();
        let mut traj = p.rollout(&controls).unwrap();
        assert!(dynamics_defect(&p, &traj).unwrap() < 1e-12);
        traj.states[5][0] += 0.1;
        let d = dynamics_defect(&p, &traj).unwrap();
        // x_5 enters two intervals: as target (error 0.1) and as source (A·δ = (0.1, 0))
        assert!((d - 0.2 / 40.0).abs() < 1e-12, "defect {d}");
    }

    #[test]
    fn validation_catches_bad_selector() {
        let plant = Arc::new(double_integrator());
        let cost = Arc::new(QuadraticCost::diagonal(&[1.0, 1.0], &[1.0], &[0.0, 0.0]));
        let mut p = OcpProblem::new(plant, cost, 4, 0.1, vec![0.0, 0.0], vec![0, 0], vec![1.0, 1.0]);
        assert!(p.validate().is_err());
        p.terminal_indices = vec![1];
        p.x_target = vec![0.0];
        assert!(p.validate().is_ok());
        p.dt = 0.0;
        assert!(p.validate().is_err());
    }
}
