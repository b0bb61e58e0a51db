//! Augmented-Lagrangian constraint machinery: penalized cost assembly,
//! projected dual ascent, the feasibility metric and the penalty schedule.

use nalgebra::DVector;
use std::sync::Arc;

use crate::problem::{
    ConstraintSet, Cost, GameProblem, StageDerivatives, TerminalDerivatives, Trajectory,
};
use crate::{Error, Result};

/// Hyperparameters of the augmented-Lagrangian outer loop.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AlParams {
    /// Starting penalty `rho_0 > 0`.
    pub initial_penalty: f64,
    /// Penalty multiplier `gamma > 1` applied on insufficient decrease.
    pub penalty_factor: f64,
    /// Sufficient-decrease ratio `tau` in `(0, 1)`.
    pub sufficient_decrease: f64,
    /// Feasibility tolerance `epsilon`.
    pub tolerance: f64,
    /// Iterations without inner progress before the dual update fires on a
    /// truncated inner solve.
    pub inner_patience: usize,
    /// Residual slack factor under which a truncated inner solve still
    /// counts as an update event.
    pub inner_slack: f64,
}

impl Default for AlParams {
    fn default() -> Self {
        Self {
            initial_penalty: 1.0,
            penalty_factor: 10.0,
            sufficient_decrease: 0.5,
            tolerance: 1e-4,
            inner_patience: 50,
            inner_slack: 30.0,
        }
    }
}

/// Multiplier estimates and penalty state for one mode solve.
///
/// Stage constraints get one multiplier per (agent, timestep, constraint)
/// triple. A state is owned by a single mode's solve loop and never shared.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AlState {
    /// `multipliers[agent][t][j] >= 0`.
    multipliers: Vec<Vec<DVector<f64>>>,
    rho: f64,
    prev_feasibility: f64,
    params: AlParams,
}

/// Constraint values on a trajectory: `values[agent][t][j]`.
pub type ConstraintValues = Vec<Vec<DVector<f64>>>;

/// Evaluates every agent's stage constraints along the mean trajectory.
pub fn constraint_values(problem: &GameProblem, traj: &Trajectory) -> ConstraintValues {
    problem
        .constraint_sets()
        .iter()
        .map(|set| {
            (0..traj.len())
                .map(|t| set.values(t, &traj.states[t], &traj.controls[t]))
                .collect()
        })
        .collect()
}

impl AlState {
    pub fn new(problem: &GameProblem, params: AlParams) -> Self {
        let multipliers = problem
            .constraint_sets()
            .iter()
            .map(|set| vec![DVector::zeros(set.len()); problem.horizon()])
            .collect();
        Self {
            multipliers,
            rho: params.initial_penalty,
            prev_feasibility: f64::INFINITY,
            params,
        }
    }

    /// A state with no constraints attached, for unconstrained flows and
    /// hand-built solutions.
    pub fn detached(params: AlParams) -> Self {
        Self {
            multipliers: Vec::new(),
            rho: params.initial_penalty,
            prev_feasibility: f64::INFINITY,
            params,
        }
    }

    pub fn params(&self) -> &AlParams {
        &self.params
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn multipliers(&self, agent: usize) -> &[DVector<f64>] {
        &self.multipliers[agent]
    }

    pub fn max_multiplier(&self) -> f64 {
        self.multipliers
            .iter()
            .flatten()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |acc, &l| acc.max(l))
    }

    /// Projected dual ascent `lambda <- max(0, lambda + rho h)` elementwise,
    /// with `h` evaluated on the current mean trajectory.
    pub fn dual_update(&mut self, h_values: &ConstraintValues) -> Result<()> {
        for (agent, per_t) in h_values.iter().enumerate() {
            for (t, h) in per_t.iter().enumerate() {
                if h.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Solver(format!(
                        "non-finite constraint value for agent {agent} at step {t}"
                    )));
                }
                let lam = &mut self.multipliers[agent][t];
                for j in 0..h.len() {
                    lam[j] = (lam[j] + self.rho * h[j]).max(0.0);
                }
            }
        }
        Ok(())
    }

    /// Combined infeasibility/complementarity metric
    /// `|| min(-h_j, lambda_j / rho) ||_2` over every constraint of every
    /// agent and stage.
    pub fn feasibility_metric(&self, h_values: &ConstraintValues) -> f64 {
        let mut sum_sq = 0.0;
        for (agent, per_t) in h_values.iter().enumerate() {
            for (t, h) in per_t.iter().enumerate() {
                let lam = &self.multipliers[agent][t];
                for j in 0..h.len() {
                    let m = (-h[j]).min(lam[j] / self.rho);
                    sum_sq += m * m;
                }
            }
        }
        sum_sq.sqrt()
    }

    /// Increases the penalty when the feasibility metric has not decreased
    /// enough since the last unconstrained convergence event, and records
    /// the new reference value. Returns the (possibly unchanged) penalty.
    pub fn penalty_schedule(&mut self, feasibility: f64) -> f64 {
        if feasibility > self.params.sufficient_decrease * self.prev_feasibility {
            self.rho *= self.params.penalty_factor;
        }
        self.prev_feasibility = feasibility;
        self.rho
    }

    /// True when the metric is within the outer-loop tolerance.
    pub fn converged(&self, feasibility: f64) -> bool {
        feasibility <= self.params.tolerance
    }

    /// Caps the penalty parameter, keeping the multipliers. Receding-
    /// horizon warm starts carry the dual estimates but restart from a
    /// moderate penalty so the inner problems stay well conditioned.
    pub fn cap_penalty(&mut self, max_rho: f64) {
        if self.rho > max_rho {
            self.rho = max_rho;
        }
        self.prev_feasibility = f64::INFINITY;
    }

    /// Shifts the per-timestep multipliers one step for receding-horizon
    /// warm starting: drop the first stage, duplicate the last.
    pub fn shift_steps(&mut self) {
        for per_agent in self.multipliers.iter_mut() {
            if per_agent.len() > 1 {
                let last = per_agent.last().unwrap().clone();
                per_agent.remove(0);
                per_agent.push(last);
            }
        }
    }
}

/// A base cost plus the augmented-Lagrangian penalty of one agent's stage
/// constraints, itself a [`Cost`].
///
/// The penalty adds `(rho/2) max(0, h_j + lambda_j/rho)^2` per constraint.
/// First derivatives are exact; the Hessian keeps the Gauss-Newton term
/// `rho grad_h grad_h'` on the active branch and drops the constraint
/// curvature.
pub struct PenalizedCost {
    base: Arc<dyn Cost>,
    constraints: ConstraintSet,
    /// Multipliers per timestep, cloned from the owning [`AlState`].
    multipliers: Vec<DVector<f64>>,
    rho: f64,
    /// Fade the Gauss-Newton term in smoothly around the activation
    /// boundary instead of switching it. Off by default; the solver turns
    /// it on for its internal models so the quadratic model cannot flicker
    /// when iterates ride a constraint boundary. Values and gradients are
    /// identical either way.
    smooth_activation: bool,
}

/// Assembles one agent's penalized stage cost from the current multiplier
/// and penalty state.
pub fn penalized_stage_cost(
    base: Arc<dyn Cost>,
    constraints: ConstraintSet,
    al: &AlState,
    agent: usize,
) -> PenalizedCost {
    PenalizedCost {
        base,
        constraints,
        multipliers: al.multipliers[agent].clone(),
        rho: al.rho(),
        smooth_activation: false,
    }
}

impl PenalizedCost {
    pub fn with_smooth_activation(mut self) -> Self {
        self.smooth_activation = true;
        self
    }

    fn active_weight(&self, t: usize, j: usize, h: f64) -> Option<f64> {
        let lam = if t < self.multipliers.len() {
            self.multipliers[t][j]
        } else {
            0.0
        };
        let shifted = h + lam / self.rho;
        (shifted > 0.0).then_some(shifted)
    }
}

impl Cost for PenalizedCost {
    fn stage(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let mut total = self.base.stage(t, x, u);
        for (j, c) in self.constraints.iter().enumerate() {
            if let Some(s) = self.active_weight(t, j, c.value(t, x, u)) {
                total += 0.5 * self.rho * s * s;
            }
        }
        total
    }

    fn stage_derivatives(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> StageDerivatives {
        // Width of the smooth activation ramp applied to the Gauss-Newton
        // term. The penalty value and gradient keep the exact kink; only
        // the curvature model fades in smoothly, which stops the quadratic
        // model from flickering when an iterate rides a constraint
        // boundary.
        const ACTIVATION_WIDTH: f64 = 1e-2;
        let mut d = self.base.stage_derivatives(t, x, u);
        for (j, c) in self.constraints.iter().enumerate() {
            let lam = if t < self.multipliers.len() {
                self.multipliers[t][j]
            } else {
                0.0
            };
            let shifted = c.value(t, x, u) + lam / self.rho;
            let activation = if self.smooth_activation {
                1.0 / (1.0 + (-shifted / ACTIVATION_WIDTH).exp())
            } else if shifted > 0.0 {
                1.0
            } else {
                0.0
            };
            if shifted > 0.0 || activation > 1e-8 {
                let (hx, hu) = c.gradient(t, x, u);
                if shifted > 0.0 {
                    let w = self.rho * shifted;
                    d.lx.axpy(w, &hx, 1.0);
                    d.lu.axpy(w, &hu, 1.0);
                }
                // Gauss-Newton curvature rho * grad grad'.
                let c2 = self.rho * activation;
                d.lxx.ger(c2, &hx, &hx, 1.0);
                d.lux.ger(c2, &hu, &hx, 1.0);
                d.luu.ger(c2, &hu, &hu, 1.0);
            }
        }
        d
    }

    fn terminal(&self, x: &DVector<f64>) -> f64 {
        self.base.terminal(x)
    }

    fn terminal_derivatives(&self, x: &DVector<f64>) -> TerminalDerivatives {
        self.base.terminal_derivatives(x)
    }
}

/// Assembles the penalized costs of every agent for the current AL state,
/// with the smooth Gauss-Newton activation the solver prefers.
pub fn penalized_costs(problem: &GameProblem, al: &AlState) -> Vec<Arc<dyn Cost>> {
    (0..problem.num_agents())
        .map(|i| {
            Arc::new(
                penalized_stage_cost(
                    problem.cost(i).clone(),
                    problem.constraints(i).clone(),
                    al,
                    i,
                )
                .with_smooth_activation(),
            ) as Arc<dyn Cost>
        })
        .collect()
}
