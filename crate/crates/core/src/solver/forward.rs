//! Forward rollouts, the open-loop Nash residual and the line search.

use nalgebra::DVector;
use rand::Rng;
use std::sync::Arc;

use super::backward::{backward_pass, BackwardPassResult};
use super::types::{GaussianPolicy, SolverConfig};
use crate::problem::{Cost, GameProblem, Trajectory};
use crate::{Error, Result};

/// Rolls the true nonlinear dynamics under the feedback policy with the
/// feedforward scaled by `eta`. `eta = 0` with zero feedback reproduces the
/// nominal trajectory.
pub fn forward_pass(
    problem: &GameProblem,
    policy: &GaussianPolicy,
    x0: &DVector<f64>,
    eta: f64,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(policy.len() + 1);
    let mut controls = Vec::with_capacity(policy.len());
    states.push(x0.clone());
    for t in 0..policy.len() {
        let x = states.last().unwrap();
        let u = policy.mean_control_scaled(t, x, eta);
        let next = problem.dynamics().step(x, &u);
        if next.iter().any(|v| !v.is_finite()) || u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(format!(
                "non-finite rollout at step {t} (eta {eta})"
            )));
        }
        controls.push(u);
        states.push(next);
    }
    Ok(Trajectory { states, controls })
}

/// Stochastic rollout: every agent samples its Gaussian policy at each
/// step. `noise_scale` scales the sampled deviation from the mean.
pub fn forward_pass_sampled<R: Rng>(
    problem: &GameProblem,
    policy: &GaussianPolicy,
    x0: &DVector<f64>,
    noise_scale: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(policy.len() + 1);
    let mut controls = Vec::with_capacity(policy.len());
    states.push(x0.clone());
    for t in 0..policy.len() {
        let x = states.last().unwrap();
        let mean = policy.mean_control(t, x);
        let sampled = policy.sample_joint(t, x, rng)?;
        let u = &mean + (sampled - &mean) * noise_scale;
        let next = problem.dynamics().step(x, &u);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(format!("non-finite sampled rollout at step {t}")));
        }
        controls.push(u);
        states.push(next);
    }
    Ok(Trajectory { states, controls })
}

/// Open-loop Nash residual: the largest entry, over agents and timesteps,
/// of each agent's gradient of its own (possibly penalized) total cost with
/// respect to its own open-loop controls, holding every other agent's
/// control sequence fixed. Computed by the per-agent adjoint recursion.
pub fn nash_residual(problem: &GameProblem, costs: &[Arc<dyn Cost>], traj: &Trajectory) -> f64 {
    let partition = problem.partition();
    let horizon = traj.len();
    let mut worst: f64 = 0.0;
    for (agent, cost) in costs.iter().enumerate() {
        let mut costate = cost.terminal_derivatives(&traj.states[horizon]).phi_x;
        for t in (0..horizon).rev() {
            let x = &traj.states[t];
            let u = &traj.controls[t];
            let d = cost.stage_derivatives(t, x, u);
            let (fx, fu) = problem.dynamics().jacobians(x, u);
            let grad_joint = &d.lu + fu.transpose() * &costate;
            for r in partition.block(agent) {
                worst = worst.max(grad_joint[r].abs());
            }
            costate = &d.lx + fx.transpose() * &costate;
        }
    }
    worst
}

/// Outcome of one backtracking line search.
pub struct LineSearchOutcome {
    pub trajectory: Trajectory,
    /// Backward pass at the accepted trajectory; reused by the next solver
    /// iteration.
    pub backward: BackwardPassResult,
    pub eta: f64,
    pub accepted: bool,
}

/// Backtracks the feedforward scale over `eta_start, eta_start/2, ...`
/// and accepts the first candidate whose stationarity residual shows a
/// strong decrease against the base. Candidate residuals come from backward
/// passes at the base's regularization so comparisons stay consistent.
/// Weak improvements are deliberately rejected; the caller's damped
/// fixed-point step handles slow contraction better than a greedy scan.
pub fn line_search(
    problem: &GameProblem,
    costs: &[Arc<dyn Cost>],
    base: &BackwardPassResult,
    nominal: &Trajectory,
    config: &SolverConfig,
    eta_start: f64,
) -> Result<LineSearchOutcome> {
    // Below this the residual is indistinguishable from rounding noise.
    const RESIDUAL_FLOOR: f64 = 1e-13;
    const STRONG_DECREASE: f64 = 0.9;

    let x0 = &nominal.states[0];
    if base.stationarity > RESIDUAL_FLOOR {
        let eta_min = 0.5f64.powi(config.max_linesearch_steps as i32 - 1);
        let mut eta = eta_start.clamp(eta_min, 1.0);
        for _ in 0..config.max_linesearch_steps {
            if let Ok(candidate) = forward_pass(problem, &base.policy, x0, eta) {
                if let Ok(bp) = super::backward::backward_pass_exact(
                    problem,
                    costs,
                    &candidate,
                    config,
                    base.regularization,
                ) {
                    if bp.stationarity < base.stationarity * STRONG_DECREASE {
                        return Ok(LineSearchOutcome {
                            trajectory: candidate,
                            backward: bp,
                            eta,
                            accepted: true,
                        });
                    }
                }
            }
            eta *= 0.5;
            if eta < eta_min {
                break;
            }
        }
    }
    let backward = backward_pass(problem, costs, nominal, config, base.regularization)?;
    Ok(LineSearchOutcome {
        trajectory: nominal.clone(),
        backward,
        eta: 0.0,
        accepted: false,
    })
}
