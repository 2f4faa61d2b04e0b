//! K disturbed copies of one quadrotor problem solved jointly, with the
//! first control shared by all of them.

use rayon::prelude::*;

use crate::admm::{
    assemble_hessians, auxiliary_steps, check_divergence, dual_update, primal_gap, AdmmError, AdmmState, ControlAnchor,
    Residuals,
};
use crate::dense::dist_inf;
use crate::models::quadrotor::acceleration_offset;
use crate::ocp::{dynamics_defect, OcpProblem, Trajectory};
use crate::scp::{build_qp, OuterRecord, ScpConfig, ScpError, TrustRadii};

/// Coupling penalty relative to `ρ_geo`. Much stiffer coupling freezes the
/// shared control near its warm value: `w` moves by O(1/ρ_c) per iteration.
pub const DEFAULT_COUPLING_SCALE: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct ScenarioBundle {
    pub base: OcpProblem,
    /// `K × N` additive accelerations.
    pub disturbances: Vec<Vec<[f64; 3]>>,
    /// One nominal per scenario.
    pub guesses: Vec<Trajectory>,
    pub radii: TrustRadii,
    /// Coupling penalty as a multiple of `ρ_geo`.
    pub coupling_scale: f64,
    /// ADMM states to resume from, one per scenario.
    pub warm: Option<Vec<AdmmState>>,
    /// Extra iterations allowed on the last outer iteration to bring the
    /// scenario `u_0` within `consensus_tol`, with the coupling stiffened to
    /// `polish_coupling_scale`.
    pub polish_iterations: usize,
    pub polish_coupling_scale: f64,
    pub consensus_tol: f64,
}

impl ScenarioBundle {
    pub fn scenario_count(&self) -> usize {
        self.disturbances.len()
    }

    /// The base problem with scenario `k`'s disturbance in its discrete map.
    pub fn scenario_problem(&self, k: usize) -> OcpProblem {
        let mut p = self.base.clone();
        p.discrete_offsets = self.disturbances[k].iter().map(|a| acceleration_offset(a, p.dt)).collect();
        p
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioSolution {
    /// The consensus value of the first control.
    pub shared_u0: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
    /// Max pairwise ∞-distance between the scenario `u_0`.
    pub u0_dispersion: f64,
    /// `max_k ‖u_0^k − w‖∞`.
    pub u0_consensus_gap: f64,
    pub defects: Vec<f64>,
    pub history: Vec<OuterRecord>,
    pub states: Vec<AdmmState>,
}

fn u0_dispersion(trajs: &[Trajectory]) -> f64 {
    let mut d = 0.0_f64;
    for a in trajs {
        for b in trajs {
            d = d.max(dist_inf(&a.controls[0], &b.controls[0]));
        }
    }
    d
}

/// Lockstep ADMM over all scenarios. Per iteration: Steps 1–3 in every
/// scenario, then the shared `w = mean_k(u_0^k + κ_k/ρ_c)`, then dual ascent
/// including `κ_k += ρ_c (u_0^k − w)`.
pub fn scenario_solve(bundle: &ScenarioBundle, config: &ScpConfig) -> Result<ScenarioSolution, ScpError> {
    config.validate()?;
    let k_count = bundle.scenario_count();
    if k_count == 0 || bundle.guesses.len() != k_count {
        return Err(ScpError::InvalidConfig("need K ≥ 1 scenarios with one guess each".into()));
    }
    let problems: Vec<OcpProblem> = (0..k_count).map(|k| bundle.scenario_problem(k)).collect();
    for (p, g) in problems.iter().zip(&bundle.guesses) {
        p.validate()?;
        p.check_shape(g)?;
    }
    let coupled = k_count > 1;
    let nu = bundle.base.n_u();
    let mut nominals = bundle.guesses.clone();
    let mut states: Vec<AdmmState> = match &bundle.warm {
        Some(w) if w.len() == k_count => w.clone(),
        _ => nominals.iter().map(AdmmState::from_trajectory).collect(),
    };
    let mut w: Vec<f64> = (0..nu).map(|j| nominals.iter().map(|t| t.controls[0][j]).sum::<f64>() / k_count as f64).collect();
    let mut history = Vec::new();
    let mut defects = Vec::new();

    for outer in 0..config.max_outer {
        let qps = problems
            .par_iter()
            .zip(&nominals)
            .map(|(p, n)| build_qp(p, n, &bundle.radii))
            .collect::<Result<Vec<_>, _>>()?;
        let last = outer + 1 == config.max_outer;
        let cfg = config.admm(outer);
        let rho = cfg.penalties;
        let mut rho_c = bundle.coupling_scale * rho.rho_geo;
        for (s, n) in states.iter_mut().zip(&nominals) {
            s.restart_primal(n);
            if coupled {
                let dual = s.anchor.take().map_or_else(|| vec![0.0; nu], |a| a.dual);
                s.anchor = Some(ControlAnchor { rho: rho_c, target: w.clone(), dual });
            } else {
                s.anchor = None;
            }
        }
        let anchor_rho = coupled.then_some(rho_c);
        let fail = |source: AdmmError| ScpError::InnerSolverFailure { iteration: outer, source };
        let factorize = |anchor_rho: Option<f64>| {
            qps.par_iter()
                .map(|qp| assemble_hessians(qp, &rho, anchor_rho))
                .collect::<Result<Vec<_>, _>>()
                .map_err(fail)
        };
        let mut factors = factorize(anchor_rho)?;
        let polish = last && coupled;
        let cap = if polish { cfg.max_iters + bundle.polish_iterations } else { cfg.max_iters };

        let mut residuals = Residuals::default();
        let mut iterations = 0;
        for it in 1..=cap {
            let duals: Vec<f64> = states
                .par_iter_mut()
                .zip(&qps)
                .zip(&factors)
                .map(|((s, qp), f)| auxiliary_steps(s, qp, f, &rho))
                .collect::<Result<Vec<_>, _>>()
                .map_err(fail)?;
            let mut dual = duals.iter().copied().fold(0.0, f64::max);
            if coupled {
                let w_new: Vec<f64> = (0..nu)
                    .map(|j| {
                        states
                            .iter()
                            .map(|s| {
                                // the anchor is always present while coupled
                                let a = s.anchor.as_ref().expect("anchor");
                                s.u[0][j] + a.dual[j] / rho_c
                            })
                            .sum::<f64>()
                            / k_count as f64
                    })
                    .collect();
                dual = dual.max(rho_c * dist_inf(&w_new, &w));
                w = w_new;
            }
            states.par_iter_mut().zip(&qps).for_each(|(s, qp)| {
                dual_update(s, qp, &rho);
                if let Some(a) = s.anchor.as_mut() {
                    for j in 0..nu {
                        a.dual[j] += rho_c * (s.u[0][j] - w[j]);
                    }
                    a.target.clone_from(&w);
                }
            });
            for s in &states {
                check_divergence(s, it).map_err(fail)?;
            }
            let mut primal = states.iter().zip(&qps).map(|(s, qp)| primal_gap(s, qp)).fold(0.0, f64::max);
            let mut gap = 0.0;
            if coupled {
                gap = states.iter().map(|s| dist_inf(&s.u[0], &w)).fold(0.0, f64::max);
                primal = primal.max(gap);
            }
            residuals = Residuals { primal, dual };
            iterations = it;
            let agreed = !polish || gap <= bundle.consensus_tol;
            if agreed && (it >= cfg.max_iters || primal <= cfg.primal_tol && dual <= cfg.dual_tol) {
                break;
            }
            if polish && it == cfg.max_iters {
                rho_c = bundle.polish_coupling_scale * rho.rho_geo;
                for s in &mut states {
                    if let Some(a) = s.anchor.as_mut() {
                        a.rho = rho_c;
                    }
                }
                factors = factorize(Some(rho_c))?;
            }
        }
        nominals = states.iter().map(AdmmState::trajectory).collect();
        defects = problems
            .iter()
            .zip(&nominals)
            .map(|(p, t)| dynamics_defect(p, t))
            .collect::<Result<Vec<_>, _>>()?;
        let cost: f64 = problems.iter().zip(&nominals).map(|(p, t)| p.objective(t)).sum::<f64>() / k_count as f64;
        history.push(OuterRecord {
            iteration: outer,
            rho,
            cost,
            defect: defects.iter().copied().fold(0.0, f64::max),
            inner_iterations: iterations,
            residuals,
        });
    }
    let gap = if coupled { states.iter().map(|s| dist_inf(&s.u[0], &w)).fold(0.0, f64::max) } else { 0.0 };
    let shared_u0 = if coupled { w } else { nominals[0].controls[0].clone() };
    Ok(ScenarioSolution {
        shared_u0,
        u0_dispersion: u0_dispersion(&nominals),
        u0_consensus_gap: gap,
        trajectories: nominals,
        defects,
        history,
        states,
    })
}
