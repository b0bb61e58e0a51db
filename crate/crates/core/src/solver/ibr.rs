//! Iterated best response baseline: Gauss-Seidel sweeps of single-agent
//! iLQR solves with every other agent's open-loop controls held fixed.

use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

use super::types::SolverConfig;
use crate::auglag::{constraint_values, penalized_costs, AlParams, AlState};
use crate::problem::{rollout, Cost, GameProblem, Trajectory};
use crate::{Error, Result};

/// Knobs for the iterated-best-response solve.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct IbrConfig {
    /// Gauss-Seidel sweeps per unconstrained stage.
    pub max_sweeps: usize,
    /// Convergence threshold on the joint control change between sweeps.
    pub tolerance: f64,
    /// Outer augmented-Lagrangian iterations when constraints exist.
    pub max_al_iterations: usize,
    /// Inner single-agent iLQR settings; the temperature is ignored (best
    /// responses are deterministic).
    pub inner: SolverConfig,
    pub al: AlParams,
}

impl Default for IbrConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 30,
            tolerance: 1e-5,
            max_al_iterations: 12,
            inner: SolverConfig {
                alpha: 0.0,
                max_iterations: 60,
                ..SolverConfig::default()
            },
            al: AlParams::default(),
        }
    }
}

/// Single-agent iLQR best response: optimizes `agent`'s open-loop controls
/// against its (possibly penalized) cost with all other agents' controls
/// frozen. Returns the updated joint control sequence.
pub fn ilqr_best_response(
    problem: &GameProblem,
    cost: &Arc<dyn Cost>,
    agent: usize,
    controls: &[DVector<f64>],
    x0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<Vec<DVector<f64>>> {
    let partition = problem.partition();
    let block = partition.block(agent);
    let n_own = block.len();
    let horizon = problem.horizon();

    let total_cost = |traj: &Trajectory| -> f64 {
        let mut j = cost.terminal(&traj.states[horizon]);
        for t in 0..horizon {
            j += cost.stage(t, &traj.states[t], &traj.controls[t]);
        }
        j
    };

    let mut controls: Vec<DVector<f64>> = controls.to_vec();
    let mut traj = rollout(problem, x0, &controls)?;
    let mut best_cost = total_cost(&traj);
    let mut mu = 0.0f64;

    for _ in 0..config.max_iterations {
        // Backward pass over the agent's own control block.
        let term = cost.terminal_derivatives(&traj.states[horizon]);
        let mut vx = term.phi_x;
        let mut vxx = term.phi_xx;
        let mut gains: Vec<(DVector<f64>, DMatrix<f64>)> = Vec::with_capacity(horizon);
        let mut grad_norm: f64 = 0.0;
        let mut failed = false;
        for t in (0..horizon).rev() {
            let x = &traj.states[t];
            let u = &traj.controls[t];
            let d = cost.stage_derivatives(t, x, u);
            let (fx, fu) = problem.dynamics().jacobians(x, u);
            let fu_own: DMatrix<f64> = fu.columns(block.start, n_own).into();
            let lu_own: DVector<f64> = d.lu.rows(block.start, n_own).into();
            let luu_own: DMatrix<f64> =
                d.luu.view((block.start, block.start), (n_own, n_own)).into();
            let lux_own: DMatrix<f64> = d.lux.rows(block.start, n_own).into();

            let qx = &d.lx + fx.transpose() * &vx;
            let qu = &lu_own + fu_own.transpose() * &vx;
            let vxx_fx = &vxx * &fx;
            let qxx = &d.lxx + fx.transpose() * &vxx_fx;
            let qux = &lux_own + fu_own.transpose() * &vxx_fx;
            let mut quu = &luu_own + fu_own.transpose() * &vxx * &fu_own;
            for r in 0..n_own {
                quu[(r, r)] += mu;
            }
            grad_norm = grad_norm.max(qu.amax());

            let chol = match nalgebra::Cholesky::new(quu.clone()) {
                Some(c) => c,
                None => {
                    failed = true;
                    break;
                }
            };
            let k = -chol.solve(&qu);
            let gain = -chol.solve(&qux);

            vx = &qx + gain.transpose() * (&quu * &k) + gain.transpose() * &qu
                + qux.transpose() * &k;
            vxx = &qxx + gain.transpose() * &quu * &gain + gain.transpose() * &qux
                + qux.transpose() * &gain;
            crate::problem::symmetrize(&mut vxx);
            gains.push((k, gain));
        }

        if failed {
            mu = if mu == 0.0 { config.regularization_floor } else { mu * 2.0 };
            if mu > config.regularization_max {
                // Give up on improving further; the current controls are
                // still a valid best-effort response.
                break;
            }
            continue;
        }
        gains.reverse();
        if grad_norm <= config.tolerance {
            break;
        }

        // Line search on the agent's own cost.
        let mut eta = 1.0;
        let mut improved = false;
        for _ in 0..config.max_linesearch_steps {
            let mut candidate = controls.clone();
            let mut x = x0.clone();
            let mut ok = true;
            for t in 0..horizon {
                let dx = &x - &traj.states[t];
                let (k, gain) = &gains[t];
                let u_own: DVector<f64> =
                    traj.controls[t].rows(block.start, n_own) + eta * k + gain * dx;
                for (offset, idx) in block.clone().enumerate() {
                    candidate[t][idx] = u_own[offset];
                }
                x = problem.dynamics().step(&x, &candidate[t]);
                if x.iter().any(|v| !v.is_finite()) {
                    ok = false;
                    break;
                }
            }
            if ok {
                let rolled = rollout(problem, x0, &candidate)?;
                let c = total_cost(&rolled);
                if c < best_cost {
                    best_cost = c;
                    controls = candidate;
                    traj = rolled;
                    improved = true;
                    break;
                }
            }
            eta *= 0.5;
        }
        if !improved {
            if mu == 0.0 {
                mu = config.regularization_floor;
            } else {
                mu *= 2.0;
            }
            if mu > config.regularization_max {
                break;
            }
        } else if mu > 0.0 {
            mu *= 0.5;
            if mu < config.regularization_floor {
                mu = 0.0;
            }
        }
    }
    Ok(controls)
}

/// Gauss-Seidel iterated best response with augmented-Lagrangian handling
/// of each agent's constraints. Returns the converged joint trajectory.
pub fn ibr_solve(
    problem: &GameProblem,
    x0: &DVector<f64>,
    init_controls: &[DVector<f64>],
    config: &IbrConfig,
) -> Result<Trajectory> {
    ibr_solve_warm(problem, x0, init_controls, config, None).map(|(traj, _)| traj)
}

/// [`ibr_solve`] with a carried augmented-Lagrangian state for receding-
/// horizon use; returns the final state for the next warm start.
pub fn ibr_solve_warm(
    problem: &GameProblem,
    x0: &DVector<f64>,
    init_controls: &[DVector<f64>],
    config: &IbrConfig,
    warm_al: Option<AlState>,
) -> Result<(Trajectory, AlState)> {
    let mut controls: Vec<DVector<f64>> = init_controls.to_vec();
    let mut al = warm_al.unwrap_or_else(|| AlState::new(problem, config.al));
    let constrained = problem.total_constraints() > 0;
    let outer = if constrained { config.max_al_iterations } else { 1 };

    for _ in 0..outer {
        let costs = penalized_costs(problem, &al);
        for _sweep in 0..config.max_sweeps {
            let mut change: f64 = 0.0;
            for agent in 0..problem.num_agents() {
                let updated = ilqr_best_response(
                    problem,
                    &costs[agent],
                    agent,
                    &controls,
                    x0,
                    &config.inner,
                )
                .map_err(|e| Error::Solver(format!("{e} (IBR agent {agent})")))?;
                for t in 0..controls.len() {
                    change = change.max((&updated[t] - &controls[t]).amax());
                }
                controls = updated;
            }
            if change < config.tolerance {
                break;
            }
        }
        if !constrained {
            break;
        }
        let traj = rollout(problem, x0, &controls)?;
        let h = constraint_values(problem, &traj);
        let feasibility = al.feasibility_metric(&h);
        if al.converged(feasibility) {
            break;
        }
        al.dual_update(&h)?;
        al.penalty_schedule(feasibility);
    }
    Ok((rollout(problem, x0, &controls)?, al))
}
