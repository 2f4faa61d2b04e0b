//! The consensus ADMM engine on its own: one convex subproblem of a
//! double integrator with a control box, linearized at zero.

use std::sync::Arc;

use consensus_scp::admm::{admm_solve, AdmmConfig, Penalties};
use consensus_scp::dense::DenseMatrix;
use consensus_scp::ocp::{LinearPlant, OcpProblem, QuadraticCost, Trajectory};
use consensus_scp::prox::ConvexSet;
use consensus_scp::scp::{build_qp, TrustRadii};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let plant = LinearPlant {
        f: DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]),
        g: DenseMatrix::from_rows(&[vec![0.0], vec![1.0]]),
    };
    let cost = QuadraticCost::diagonal(&[10.0, 1.0], &[1.0], &[10.0, 1.0]);
    let n = 20;
    let mut problem = OcpProblem::new(Arc::new(plant), Arc::new(cost), n, 0.1, vec![1.0, 0.0], vec![], vec![]);
    problem.control_sets = vec![ConvexSet::boxed(vec![-0.5], vec![0.5]); n];

    let qp = build_qp(&problem, &Trajectory::zeros(2, 1, n), &TrustRadii::unbounded(2, 1))?;
    let config = AdmmConfig { penalties: Penalties::uniform(50.0), primal_tol: 1e-6, dual_tol: 1e-6, ..AdmmConfig::default() };
    let out = admm_solve(&qp, &config, None)?;
    println!("converged {} after {} iterations, residuals {:?}", out.converged, out.iterations, out.residuals);
    let u: Vec<String> = out.trajectory.controls.iter().map(|u| format!("{:+.3}", u[0])).collect();
    println!("controls {}", u.join(" "));
    Ok(())
}
