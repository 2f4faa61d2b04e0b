//! Independent reference computations for testing the solver crate.
//!
//! Nothing here shares numerics with the code under test: QPs are solved by
//! a dense primal-dual interior-point method on the full stacked problem,
//! then polished on the active set it identifies. Jacobians come from
//! Richardson-extrapolated differences, rollouts from many RK4 substeps,
//! projections from sampling.

use consensus_scp::ocp::{Dynamics, Trajectory};
use consensus_scp::prox::ConvexSet;
use consensus_scp::scp::QpData;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("set kind not supported by the reference QP solver")]
    UnsupportedSet,
    #[error("KKT system is singular")]
    Singular,
    #[error("interior point did not converge (residual {0:e})")]
    NoConvergence(f64),
}

/// Stacked QP `min ½ zᵀPz + qᵀz  s.t.  Ez = f,  Gz ≤ h`.
#[derive(Debug, Clone)]
pub struct StackedQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub e: DMatrix<f64>,
    pub f: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub n_x: usize,
    pub n_u: usize,
    pub horizon: usize,
}

fn state_offset(i: usize, nx: usize, nu: usize) -> usize {
    i * (nx + nu)
}

fn collect_constraints(
    set: &ConvexSet,
    offset: usize,
    eq: &mut Vec<(usize, f64)>,
    ineq: &mut Vec<(usize, f64, f64)>,
) -> Result<(), OracleError> {
    match set {
        ConvexSet::Box { indices, lo, hi } => {
            for (k, &i) in indices.iter().enumerate() {
                ineq.push((offset + i, lo[k], hi[k]));
            }
        }
        ConvexSet::AffineFix { entries } => {
            for &(i, v) in entries {
                eq.push((offset + i, v));
            }
        }
        ConvexSet::Chain { members } => {
            for m in members {
                collect_constraints(m, offset, eq, ineq)?;
            }
        }
        _ => return Err(OracleError::UnsupportedSet),
    }
    Ok(())
}

/// Stacks a QP with box and fixing constraints into one dense problem.
/// Variable order: `x_0, u_0, x_1, u_1, …, x_N`.
pub fn stack_qp(qp: &QpData) -> Result<StackedQp, OracleError> {
    let n = qp.horizon();
    let nx = qp.n_x();
    let nu = qp.n_u();
    let dim = n * (nx + nu) + nx;
    let mut p = DMatrix::zeros(dim, dim);
    let mut q = DVector::zeros(dim);
    for i in 0..=n {
        let c = &qp.costs[i];
        let o = state_offset(i, nx, nu);
        for r in 0..nx {
            q[o + r] = c.state_linear[r];
            for s in 0..nx {
                p[(o + r, o + s)] = c.state_weight[(r, s)];
            }
        }
        if i < n {
            for r in 0..nu {
                q[o + nx + r] = c.control_linear[r];
                for s in 0..nu {
                    p[(o + nx + r, o + nx + s)] = c.control_weight[(r, s)];
                }
                for s in 0..nx {
                    p[(o + s, o + nx + r)] = c.cross_weight[(s, r)];
                    p[(o + nx + r, o + s)] = c.cross_weight[(s, r)];
                }
            }
        }
    }
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for i in 0..n {
        let l = &qp.linearizations[i];
        let o = state_offset(i, nx, nu);
        let on = state_offset(i + 1, nx, nu);
        for r in 0..nx {
            let mut row = vec![(on + r, 1.0)];
            for s in 0..nx {
                row.push((o + s, -l.a[(r, s)]));
            }
            for s in 0..nu {
                row.push((o + nx + s, -l.b[(r, s)]));
            }
            rows.push((row, l.d[r]));
        }
    }
    let mut fixes = Vec::new();
    let mut boxes = Vec::new();
    for i in 0..=n {
        collect_constraints(&qp.geometric_state_sets[i], state_offset(i, nx, nu), &mut fixes, &mut boxes)?;
    }
    for i in 0..n {
        collect_constraints(&qp.geometric_control_sets[i], state_offset(i, nx, nu) + nx, &mut fixes, &mut boxes)?;
    }
    for (j, v) in fixes {
        rows.push((vec![(j, 1.0)], v));
    }
    let mut e = DMatrix::zeros(rows.len(), dim);
    let mut f = DVector::zeros(rows.len());
    for (r, (row, rhs)) in rows.iter().enumerate() {
        for &(j, v) in row {
            e[(r, j)] += v;
        }
        f[r] = *rhs;
    }
    let mut g_rows = Vec::new();
    for (j, lo, hi) in boxes {
        if hi.is_finite() {
            g_rows.push((j, 1.0, hi));
        }
        if lo.is_finite() {
            g_rows.push((j, -1.0, -lo));
        }
    }
    let mut g = DMatrix::zeros(g_rows.len(), dim);
    let mut h = DVector::zeros(g_rows.len());
    for (r, &(j, s, b)) in g_rows.iter().enumerate() {
        g[(r, j)] = s;
        h[r] = b;
    }
    Ok(StackedQp { p, q, e, f, g, h, n_x: nx, n_u: nu, horizon: n })
}

/// Primal-dual interior point with a fixed centering parameter.
pub fn solve_stacked(qp: &StackedQp, tol: f64) -> Result<DVector<f64>, OracleError> {
    let n = qp.p.nrows();
    let me = qp.e.nrows();
    let mi = qp.g.nrows();
    let mut z = DVector::zeros(n);
    let mut y = DVector::zeros(me);
    let mut s = DVector::from_element(mi, 1.0);
    let mut lam = DVector::from_element(mi, 1.0);
    for i in 0..mi {
        s[i] = (qp.h[i] - (&qp.g * &z)[i]).max(1.0);
    }
    let mut last = f64::INFINITY;
    for _ in 0..200 {
        let rd = &qp.p * &z + &qp.q + qp.e.transpose() * &y + qp.g.transpose() * &lam;
        let rp = &qp.e * &z - &qp.f;
        let ri = &qp.g * &z + &s - &qp.h;
        let mu = if mi > 0 { s.dot(&lam) / mi as f64 } else { 0.0 };
        last = rd.amax().max(rp.amax()).max(if mi > 0 { ri.amax() } else { 0.0 }).max(mu);
        if last < tol {
            return Ok(polish(qp, &z, &s, &lam).unwrap_or(z));
        }
        let sigma = 0.1;
        let dim = n + me + mi;
        let mut k = DMatrix::zeros(dim, dim);
        k.view_mut((0, 0), (n, n)).copy_from(&qp.p);
        k.view_mut((0, n), (n, me)).copy_from(&qp.e.transpose());
        k.view_mut((n, 0), (me, n)).copy_from(&qp.e);
        k.view_mut((0, n + me), (n, mi)).copy_from(&qp.g.transpose());
        k.view_mut((n + me, 0), (mi, n)).copy_from(&qp.g);
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&(-&rd));
        rhs.rows_mut(n, me).copy_from(&(-&rp));
        for i in 0..mi {
            k[(n + me + i, n + me + i)] = -s[i] / lam[i];
            rhs[n + me + i] = -ri[i] - (sigma * mu - s[i] * lam[i]) / lam[i];
        }
        let sol = k.lu().solve(&rhs).ok_or(OracleError::Singular)?;
        let dz = sol.rows(0, n).into_owned();
        let dy = sol.rows(n, me).into_owned();
        let dl = sol.rows(n + me, mi).into_owned();
        let ds: DVector<f64> = DVector::from_fn(mi, |i, _| (sigma * mu - s[i] * lam[i] - s[i] * dl[i]) / lam[i]);
        let mut alpha = 1.0_f64;
        for i in 0..mi {
            if ds[i] < 0.0 {
                alpha = alpha.min(-0.99 * s[i] / ds[i]);
            }
            if dl[i] < 0.0 {
                alpha = alpha.min(-0.99 * lam[i] / dl[i]);
            }
        }
        z += alpha * dz;
        y += alpha * dy;
        s += alpha * ds;
        lam += alpha * dl;
    }
    Err(OracleError::NoConvergence(last))
}

/// Reference optimum of a box-constrained QP as a trajectory.
/// Equality-KKT solution with the rows `active` of `G z ≤ h` held tight.
#[derive(Debug, Clone)]
pub struct ActiveSetSolution {
    pub z: DVector<f64>,
    pub multipliers: DVector<f64>,
    /// Every other row satisfied and every active multiplier nonnegative.
    pub optimal: bool,
}

pub fn solve_with_active_set(qp: &StackedQp, active: &[usize]) -> Result<ActiveSetSolution, OracleError> {
    let n = qp.p.nrows();
    let me = qp.e.nrows();
    let ma = active.len();
    let dim = n + me + ma;
    let mut k = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    k.view_mut((0, 0), (n, n)).copy_from(&qp.p);
    k.view_mut((0, n), (n, me)).copy_from(&qp.e.transpose());
    k.view_mut((n, 0), (me, n)).copy_from(&qp.e);
    rhs.rows_mut(0, n).copy_from(&(-&qp.q));
    rhs.rows_mut(n, me).copy_from(&qp.f);
    for (r, &i) in active.iter().enumerate() {
        for c in 0..n {
            k[(n + me + r, c)] = qp.g[(i, c)];
            k[(c, n + me + r)] = qp.g[(i, c)];
        }
        rhs[n + me + r] = qp.h[i];
    }
    let sol = k.lu().solve(&rhs).ok_or(OracleError::Singular)?;
    let z = sol.rows(0, n).into_owned();
    let multipliers = sol.rows(n + me, ma).into_owned();
    let feasible = (&qp.g * &z - &qp.h).iter().all(|v| *v <= 1e-9);
    let optimal = feasible && multipliers.iter().all(|v| *v >= -1e-9) && z.iter().all(|v| v.is_finite());
    Ok(ActiveSetSolution { z, multipliers, optimal })
}

/// Polishes the interior iterate on the active set it suggests; rejected
/// unless optimal and close to the iterate.
fn polish(qp: &StackedQp, z: &DVector<f64>, s: &DVector<f64>, lam: &DVector<f64>) -> Option<DVector<f64>> {
    let active: Vec<usize> = (0..qp.g.nrows()).filter(|&i| s[i] < lam[i]).collect();
    let sol = solve_with_active_set(qp, &active).ok()?;
    (sol.optimal && (&sol.z - z).amax() < 1e-6).then_some(sol.z)
}

/// Splits stacked variables into a trajectory.
pub fn unstack(st: &StackedQp, z: &DVector<f64>) -> Trajectory {
    let (nx, nu, n) = (st.n_x, st.n_u, st.horizon);
    let states = (0..=n).map(|i| z.rows(state_offset(i, nx, nu), nx).iter().copied().collect()).collect();
    let controls = (0..n).map(|i| z.rows(state_offset(i, nx, nu) + nx, nu).iter().copied().collect()).collect();
    Trajectory { states, controls }
}

pub fn solve_qp_kkt(qp: &QpData) -> Result<Trajectory, OracleError> {
    let st = stack_qp(qp)?;
    let z = solve_stacked(&st, 1e-10)?;
    Ok(unstack(&st, &z))
}

/// Explicit per-node Hessian by entrywise sums over the block formulas.
pub fn reference_hessian(qp: &QpData, node: usize, rho_eq: f64, rho_dyn: f64, rho_geo: f64) -> DMatrix<f64> {
    let nx = qp.n_x();
    let c = &qp.costs[node];
    if node == qp.horizon() {
        return DMatrix::from_fn(nx, nx, |r, s| c.state_weight[(r, s)] + if r == s { rho_geo + rho_eq } else { 0.0 });
    }
    let nu = qp.n_u();
    let l = &qp.linearizations[node];
    let eq = if node > 0 { rho_eq } else { 0.0 };
    // [A B] as one nx × (nx+nu) matrix
    let ab = |r: usize, j: usize| if j < nx { l.a[(r, j)] } else { l.b[(r, j - nx)] };
    DMatrix::from_fn(nx + nu, nx + nu, |i, j| {
        let mut v = 0.0;
        for r in 0..nx {
            v += ab(r, i) * ab(r, j);
        }
        v *= rho_dyn;
        v += match (i < nx, j < nx) {
            (true, true) => c.state_weight[(i, j)],
            (true, false) => c.cross_weight[(i, j - nx)],
            (false, true) => c.cross_weight[(j, i - nx)],
            (false, false) => c.control_weight[(i - nx, j - nx)],
        };
        if i == j {
            v += rho_geo + if i < nx { eq } else { 0.0 };
        }
        v
    })
}

fn rk4(f: &dyn Dynamics, x: &[f64], u: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let mut k = vec![vec![0.0; n]; 4];
    let mut tmp = vec![0.0; n];
    f.derivative(x, u, &mut k[0]);
    for stage in 1..4 {
        let c = if stage == 3 { 1.0 } else { 0.5 };
        for j in 0..n {
            tmp[j] = x[j] + c * h * k[stage - 1][j];
        }
        let (_, rest) = k.split_at_mut(stage);
        f.derivative(&tmp, u, &mut rest[0]);
    }
    (0..n).map(|j| x[j] + h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j])).collect()
}

/// Zero-order-hold propagation over `dt` with `substeps` RK4 steps.
pub fn fine_step(f: &dyn Dynamics, x: &[f64], u: &[f64], dt: f64, substeps: usize) -> Vec<f64> {
    let h = dt / substeps as f64;
    let mut x = x.to_vec();
    for _ in 0..substeps {
        x = rk4(f, &x, u, h);
    }
    x
}

/// Fine rollout of a control sequence.
pub fn fine_rollout(f: &dyn Dynamics, x0: &[f64], controls: &[Vec<f64>], dt: f64, substeps: usize) -> Vec<Vec<f64>> {
    let mut out = vec![x0.to_vec()];
    for u in controls {
        let mut next = fine_step(f, out.last().unwrap(), u, dt, substeps);
        f.normalize_state(&mut next);
        out.push(next);
    }
    out
}

/// Jacobian of `map` by fourth-order central differences (Richardson on two steps).
pub fn richardson_jacobian(map: impl Fn(&[f64]) -> Vec<f64>, at: &[f64], h: f64) -> DMatrix<f64> {
    let m = map(at).len();
    let mut jac = DMatrix::zeros(m, at.len());
    for j in 0..at.len() {
        let eval = |step: f64| {
            let mut p = at.to_vec();
            p[j] += step;
            let fp = map(&p);
            p[j] = at[j] - step;
            let fm = map(&p);
            fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * step)).collect::<Vec<f64>>()
        };
        let d1 = eval(h);
        let d2 = eval(h / 2.0);
        for r in 0..m {
            jac[(r, j)] = (4.0 * d2[r] - d1[r]) / 3.0;
        }
    }
    jac
}

/// Best of `samples` candidate points on the boundary of a 2-D or 3-D cone,
/// plus the apex and the point itself when it is already inside.
pub fn cone_projection_search(v: &[f64], axis: &[f64], half_angle: f64, samples: usize) -> Vec<f64> {
    let n = v.len();
    let norm = |w: &[f64]| w.iter().map(|c| c * c).sum::<f64>().sqrt();
    let a: Vec<f64> = axis.iter().map(|c| c / norm(axis)).collect();
    let s: f64 = v.iter().zip(&a).map(|(x, y)| x * y).sum();
    let perp: Vec<f64> = v.iter().zip(&a).map(|(x, y)| x - s * y).collect();
    if norm(&perp) <= s * half_angle.tan() {
        return v.to_vec();
    }
    // orthonormal basis of the axis complement
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        let mut w: Vec<f64> = e.clone();
        let p: f64 = w.iter().zip(&a).map(|(x, y)| x * y).sum();
        for (wi, ai) in w.iter_mut().zip(&a) {
            *wi -= p * ai;
        }
        for b in &basis {
            let p: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
            for (wi, bi) in w.iter_mut().zip(b) {
                *wi -= p * bi;
            }
        }
        if norm(&w) > 1e-8 {
            let nw = norm(&w);
            basis.push(w.iter().map(|c| c / nw).collect());
        }
    }
    let dist = |w: &[f64]| v.iter().zip(w).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut best = vec![0.0; n];
    let mut best_d = dist(&best);
    let reach = 2.0 * norm(v);
    let dirs: Vec<Vec<f64>> = if basis.len() == 1 {
        vec![basis[0].clone(), basis[0].iter().map(|c| -c).collect()]
    } else {
        (0..samples)
            .map(|k| {
                let phi = 2.0 * std::f64::consts::PI * k as f64 / samples as f64;
                (0..n).map(|i| phi.cos() * basis[0][i] + phi.sin() * basis[1][i]).collect()
            })
            .collect()
    };
    for d in &dirs {
        let g: Vec<f64> = (0..n).map(|i| half_angle.cos() * a[i] + half_angle.sin() * d[i]).collect();
        // closest point on the ray t·g, t ≥ 0
        let t = v.iter().zip(&g).map(|(x, y)| x * y).sum::<f64>().clamp(0.0, reach);
        let w: Vec<f64> = g.iter().map(|c| c * t).collect();
        let dw = dist(&w);
        if dw < best_d {
            best_d = dw;
            best = w;
        }
    }
    best
}
