//! Per-mode equilibrium solver: alternating backward/forward sweeps with
//! augmented-Lagrangian outer updates, plus an iterated-best-response
//! baseline.

use nalgebra::DVector;
use std::sync::Arc;

use crate::auglag::{constraint_values, penalized_costs, AlParams, AlState};
use crate::log::log_debug;
use crate::problem::{rollout, Cost, GameProblem, Trajectory};
use crate::Result;

mod backward;
mod forward;
mod ibr;
mod types;

pub use backward::{
    backward_pass, policy_covariance, q_expand, solve_feedback, stack_quu, terminal_expansion,
    value_update, BackwardPassResult, StackedSystem,
};
pub use forward::{
    forward_pass, forward_pass_sampled, line_search, nash_residual, LineSearchOutcome,
};
pub use ibr::{ibr_solve, ibr_solve_warm, ilqr_best_response, IbrConfig};
pub use types::{
    gaussian_entropy, gaussian_log_density, sample_gaussian, AgentQ, AgentValue, GaussianPolicy,
    PolicyStep, QExpansion, SolverConfig, ValueExpansion,
};

/// How a mode solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    /// Stationarity and feasibility both within tolerance.
    Converged,
    /// Iteration budget exhausted; best iterate returned.
    MaxIterations,
    /// Line search could not improve even at maximum regularization.
    Stalled,
}

/// One line of the per-iteration solver log.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Stationarity residual after this iteration.
    pub residual: f64,
    /// Feasibility metric on the current mean trajectory.
    pub feasibility: f64,
    pub rho: f64,
    /// Accepted step scale; zero on dual-update or stalled iterations.
    pub eta: f64,
    pub max_multiplier: f64,
}

/// A converged (or best-effort) solution of one local generalized Nash
/// equilibrium.
#[derive(Clone, serde::Serialize, serde::Deserialize)]
pub struct SolveOutcome {
    pub trajectory: Trajectory,
    pub policy: GaussianPolicy,
    /// Value models at `t = 0 .. T`.
    pub values: Vec<ValueExpansion>,
    /// Q models at `t = 0 .. T-1`.
    pub q_expansions: Vec<QExpansion>,
    pub al: AlState,
    pub status: SolveStatus,
    /// Final stationarity residual (own-block gradient of the quadratic
    /// model, the solver's convergence measure).
    pub stationarity: f64,
    /// Final feasibility metric.
    pub feasibility: f64,
    /// Final open-loop Nash residual of the penalized costs, from the
    /// per-agent adjoint recursion.
    pub open_loop_residual: f64,
    pub iterations: Vec<IterationRecord>,
}

impl SolveOutcome {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Solves one local generalized Nash equilibrium from an initial control
/// guess.
///
/// Alternates backward and line-searched forward passes until the
/// stationarity residual is within tolerance, then checks feasibility;
/// while infeasible it runs the projected dual ascent and penalty schedule
/// and keeps iterating. Constraints are enforced on the mean trajectory.
pub fn solve_mode(
    problem: &GameProblem,
    x0: &DVector<f64>,
    init_controls: &[DVector<f64>],
    config: &SolverConfig,
    al_params: &AlParams,
) -> Result<SolveOutcome> {
    solve_mode_warm(problem, x0, init_controls, config, al_params, None)
}

/// [`solve_mode`] with a carried-over augmented-Lagrangian state, so
/// receding-horizon re-solves keep their multiplier estimates instead of
/// restarting the dual loop from zero.
pub fn solve_mode_warm(
    problem: &GameProblem,
    x0: &DVector<f64>,
    init_controls: &[DVector<f64>],
    config: &SolverConfig,
    al_params: &AlParams,
    warm_al: Option<AlState>,
) -> Result<SolveOutcome> {
    config.validate()?;
    let mut traj = rollout(problem, x0, init_controls)?;
    let mut al = warm_al.unwrap_or_else(|| AlState::new(problem, *al_params));
    let constrained = problem.total_constraints() > 0;
    let mut costs: Vec<Arc<dyn Cost>> = penalized_costs(problem, &al);
    let mut mu = 0.0;

    let mut records = Vec::new();
    let mut status = SolveStatus::MaxIterations;
    let mut bp = backward_pass(problem, &costs, &traj, config, mu)?;
    // Best iterate under the current multipliers, restored on exit paths.
    let mut best: Option<(f64, Trajectory)> = None;
    let mut since_best = 0usize;

    for iteration in 0..config.max_iterations {
        bp = backward_pass(problem, &costs, &traj, config, mu)?;
        mu = bp.regularization;

        match &mut best {
            Some((merit, snapshot)) if bp.stationarity < *merit => {
                *merit = bp.stationarity;
                *snapshot = traj.clone();
                since_best = 0;
            }
            None => {
                best = Some((bp.stationarity, traj.clone()));
                since_best = 0;
            }
            _ => since_best += 1,
        }

        // A long stretch without inner progress at a moderate residual
        // counts as a truncated inner solve: run the dual machinery anyway
        // so positive multipliers can smooth the active-set kinks. Once the
        // feasibility metric is within tolerance the multipliers stay put
        // and the loop keeps polishing stationarity.
        let truncated = constrained
            && since_best >= al_params.inner_patience
            && bp.stationarity <= config.tolerance * al_params.inner_slack
            && {
                let h = constraint_values(problem, &traj);
                !al.converged(al.feasibility_metric(&h))
            };

        if bp.stationarity <= config.tolerance || truncated {
            let h = constraint_values(problem, &traj);
            let feasibility = al.feasibility_metric(&h);
            records.push(IterationRecord {
                iteration,
                residual: bp.stationarity,
                feasibility,
                rho: al.rho(),
                eta: 0.0,
                max_multiplier: al.max_multiplier(),
            });
            log_debug!(
                "iter {iteration}: stationary (residual {:.3e}), feasibility {:.3e}",
                bp.stationarity,
                feasibility
            );
            if bp.stationarity <= config.tolerance && (!constrained || al.converged(feasibility)) {
                status = SolveStatus::Converged;
                break;
            }
            if constrained && !al.converged(feasibility) {
                if let Some((_, snapshot)) = &best {
                    traj = snapshot.clone();
                }
                al.dual_update(&h)?;
                al.penalty_schedule(feasibility);
                costs = penalized_costs(problem, &al);
                // Multipliers changed, so merits are not comparable anymore.
                best = None;
                since_best = 0;
                continue;
            }
        }

        // Newton phase: a backtracking search that only takes strong
        // decreases. When no step qualifies, fall back to one damped
        // fixed-point step, which contracts near equilibria where the
        // greedy scan cannot make headway.
        let ls = line_search(problem, &costs, &bp, &traj, config, 1.0)?;
        let (eta, next_traj) = if ls.accepted {
            if mu > 0.0 {
                mu *= 0.25;
                if mu < config.regularization_floor {
                    mu = 0.0;
                }
            }
            (ls.eta, Some(ls.trajectory))
        } else {
            let mut damped = config.fallback_step;
            let mut next = None;
            while damped > 1e-4 {
                match forward_pass(problem, &bp.policy, &traj.states[0], damped) {
                    Ok(candidate) => {
                        next = Some(candidate);
                        break;
                    }
                    Err(_) => damped *= 0.5,
                }
            }
            match next {
                Some(candidate) => {
                    if mu > 0.0 {
                        mu *= 0.5;
                        if mu < config.regularization_floor {
                            mu = 0.0;
                        }
                    }
                    (damped, Some(candidate))
                }
                None => {
                    // Even tiny steps blow up: raise the regularization.
                    let next_mu = if mu == 0.0 {
                        config.regularization_floor
                    } else {
                        mu * 2.0
                    };
                    if next_mu > config.regularization_max {
                        status = SolveStatus::Stalled;
                        break;
                    }
                    mu = next_mu;
                    (0.0, None)
                }
            }
        };
        let feasibility = al.feasibility_metric(&constraint_values(problem, &traj));
        records.push(IterationRecord {
            iteration,
            residual: bp.stationarity,
            feasibility,
            rho: al.rho(),
            eta,
            max_multiplier: al.max_multiplier(),
        });
        log_debug!(
            "iter {iteration}: residual {:.3e}, eta {:.3}, rho {:.1e}, mu {:.1e}",
            bp.stationarity,
            eta,
            al.rho(),
            mu
        );
        if let Some(next) = next_traj {
            traj = next;
        }
    }

    if status != SolveStatus::Converged {
        if let Some((merit, snapshot)) = best {
            if merit < bp.stationarity {
                traj = snapshot;
                bp = backward_pass(problem, &costs, &traj, config, mu)?;
            }
        }
    }

    let h = constraint_values(problem, &traj);
    let feasibility = al.feasibility_metric(&h);
    let open_loop_residual = nash_residual(problem, &costs, &traj);
    Ok(SolveOutcome {
        trajectory: traj,
        policy: bp.policy,
        values: bp.values,
        q_expansions: bp.q_expansions,
        al,
        status,
        stationarity: bp.stationarity,
        feasibility,
        open_loop_residual,
        iterations: records,
    })
}
