#![allow(dead_code)]

use std::sync::Arc;

use consensus_scp::dense::DenseMatrix;
use consensus_scp::ocp::{LinearPlant, NodeCost, NodeLinearization, OcpProblem, QuadraticCost, Trajectory};
use consensus_scp::prox::ConvexSet;
use consensus_scp::scp::{build_qp, QpData, TrustRadii};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, r: usize, c: usize, scale: f64) -> DenseMatrix {
    DenseMatrix::from_fn(r, c, |_, _| scale * rng.random_range(-1.0..1.0))
}

pub fn random_spd(rng: &mut impl Rng, n: usize, floor: f64) -> DenseMatrix {
    let m = random_matrix(rng, n, n, 1.0);
    let mut s = m.tr_matmul(&m);
    s.add_diagonal(floor);
    s.symmetrized()
}

/// Strictly convex LTI QP with box bounds on controls and on two state
/// coordinates.
pub fn random_box_qp(seed: u64, horizon: usize, nx: usize, nu: usize) -> QpData {
    random_box_qp_scaled(seed, horizon, nx, nu, 1.0)
}

pub fn random_box_qp_scaled(seed: u64, horizon: usize, nx: usize, nu: usize, w: f64) -> QpData {
    let mut rng = rng(seed);
    let mut a = random_matrix(&mut rng, nx, nx, 0.1);
    a.add_diagonal(1.0);
    let b = random_matrix(&mut rng, nx, nu, 0.5);
    let lins: Vec<NodeLinearization> = (0..horizon)
        .map(|_| NodeLinearization {
            a: a.clone(),
            b: b.clone(),
            d: (0..nx).map(|_| 0.05 * rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let mut costs: Vec<NodeCost> = (0..horizon)
        .map(|_| NodeCost {
            state_weight: random_spd(&mut rng, nx, 0.1).scaled(w),
            control_weight: random_spd(&mut rng, nu, 0.1).scaled(w),
            cross_weight: DenseMatrix::zeros(nx, nu),
            state_linear: (0..nx).map(|_| w * rng.random_range(-1.0..1.0)).collect(),
            control_linear: (0..nu).map(|_| w * rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    costs.push(NodeCost::terminal(
        random_spd(&mut rng, nx, 0.1).scaled(w),
        (0..nx).map(|_| w * rng.random_range(-1.0..1.0)).collect(),
    ));
    let x_init: Vec<f64> = (0..nx).map(|_| rng.random_range(-1.0..1.0)).collect();
    let state_box = ConvexSet::box_on(vec![0, 1], vec![-1.5, -1.5], vec![1.5, 1.5]);
    let control_box = ConvexSet::boxed(vec![-0.5; nu], vec![0.5; nu]);
    QpData::new(
        Trajectory::zeros(nx, nu, horizon),
        lins,
        costs,
        vec![state_box; horizon + 1],
        vec![control_box; horizon],
        x_init,
        vec![],
        vec![],
    )
    .expect("consistent QP")
}

/// Planar double integrator, state `(p, v)`, control acceleration, with a
/// tracking cost toward the origin and an optional control box.
pub fn double_integrator(horizon: usize, weight: f64, control_bound: Option<f64>) -> OcpProblem {
    let f = DenseMatrix::from_rows(&[
        vec![0.0, 0.0, 1.0, 0.0],
        vec![0.0, 0.0, 0.0, 1.0],
        vec![0.0, 0.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.0, 0.0],
    ]);
    let g = DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
    let cost = QuadraticCost::diagonal(&[weight; 4], &[weight; 2], &[weight; 4]);
    let mut p = OcpProblem::new(
        Arc::new(LinearPlant { f, g }),
        Arc::new(cost),
        horizon,
        0.1,
        vec![1.0, -0.5, 0.0, 0.3],
        vec![],
        vec![],
    );
    if let Some(b) = control_bound {
        p.control_sets = vec![ConvexSet::boxed(vec![-b; 2], vec![b; 2]); horizon];
    }
    p
}

pub fn qp_at_zero(problem: &OcpProblem) -> QpData {
    let nominal = Trajectory::zeros(problem.n_x(), problem.n_u(), problem.horizon);
    build_qp(problem, &nominal, &TrustRadii::unbounded(problem.n_x(), problem.n_u())).expect("QP")
}

pub fn to_nalgebra(m: &DenseMatrix) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}
