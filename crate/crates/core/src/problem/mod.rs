//! Game problem definitions: dynamics, per-agent costs and constraints,
//! trajectories, and the shipped scenario library.

use nalgebra::{DMatrix, DVector};
use std::ops::Range;
use std::sync::Arc;

use crate::{Error, Result};

mod check;
mod constraint;
mod cost;
mod dynamics;
mod scenarios;

pub use check::{check_derivatives, DerivativeReport, FiniteDiff};
pub use constraint::{
    AffineConstraint, Constraint, ConstraintSet, FnConstraint, SmoothedCollisionConstraint,
};
pub use cost::{
    Cost, FnCost, QuadraticCost, RacingCost, SoftCollisionCost, StageDerivatives, SumCost,
    TerminalDerivatives,
};
pub use dynamics::{Dynamics, LinearDynamics, MultiUnicycle, TripleIntegrator};
pub use scenarios::{
    avoidance_initial_state, make_collision_avoidance, make_racing, make_triple_integrator,
    racing_initial_state, AvoidanceSpec, RacingSpec, TripleIntegratorSpec,
};

/// Contiguous partition of the joint control vector into per-agent blocks.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ControlPartition {
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl ControlPartition {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(
                "control partition requires at least one nonempty block".into(),
            ));
        }
        let mut offsets = Vec::with_capacity(dims.len());
        let mut acc = 0;
        for &d in &dims {
            offsets.push(acc);
            acc += d;
        }
        Ok(Self { dims, offsets })
    }

    pub fn num_agents(&self) -> usize {
        self.dims.len()
    }

    /// Total joint control dimension.
    pub fn total_dim(&self) -> usize {
        self.offsets.last().unwrap() + self.dims.last().unwrap()
    }

    pub fn agent_dim(&self, agent: usize) -> usize {
        self.dims[agent]
    }

    /// Index range of one agent's block inside the joint control vector.
    pub fn block(&self, agent: usize) -> Range<usize> {
        let start = self.offsets[agent];
        start..start + self.dims[agent]
    }

    pub fn slice(&self, joint: &DVector<f64>, agent: usize) -> DVector<f64> {
        joint.rows(self.offsets[agent], self.dims[agent]).into()
    }
}

/// A discrete-time dynamic game: joint dynamics, per-agent costs and
/// constraints, horizon and control partition.
///
/// Problems are immutable after construction and safe to share across
/// parallel mode solves.
pub struct GameProblem {
    dynamics: Arc<dyn Dynamics>,
    costs: Vec<Arc<dyn Cost>>,
    constraints: Vec<ConstraintSet>,
    partition: ControlPartition,
    horizon: usize,
    state_dim: usize,
    dt: f64,
}

impl GameProblem {
    pub fn new(
        dynamics: Arc<dyn Dynamics>,
        costs: Vec<Arc<dyn Cost>>,
        constraints: Vec<ConstraintSet>,
        partition: ControlPartition,
        horizon: usize,
        dt: f64,
    ) -> Result<Self> {
        let num_agents = partition.num_agents();
        if costs.len() != num_agents {
            return Err(Error::Config(format!(
                "expected {} cost models, got {}",
                num_agents,
                costs.len()
            )));
        }
        if constraints.len() != num_agents {
            return Err(Error::Config(format!(
                "expected {} constraint sets, got {}",
                num_agents,
                constraints.len()
            )));
        }
        if horizon < 2 {
            return Err(Error::Config(format!(
                "horizon must be at least 2, got {horizon}"
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        let state_dim = dynamics.state_dim();
        if dynamics.control_dim() != partition.total_dim() {
            return Err(Error::Config(format!(
                "dynamics control dim {} does not match partition total {}",
                dynamics.control_dim(),
                partition.total_dim()
            )));
        }
        Ok(Self {
            dynamics,
            costs,
            constraints,
            partition,
            horizon,
            state_dim,
            dt,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.partition.num_agents()
    }

    /// Number of timesteps T; trajectories hold T+1 states and T controls.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.partition.total_dim()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn partition(&self) -> &ControlPartition {
        &self.partition
    }

    pub fn dynamics(&self) -> &Arc<dyn Dynamics> {
        &self.dynamics
    }

    pub fn cost(&self, agent: usize) -> &Arc<dyn Cost> {
        &self.costs[agent]
    }

    pub fn costs(&self) -> &[Arc<dyn Cost>] {
        &self.costs
    }

    pub fn constraints(&self, agent: usize) -> &ConstraintSet {
        &self.constraints[agent]
    }

    pub fn constraint_sets(&self) -> &[ConstraintSet] {
        &self.constraints
    }

    /// Total number of scalar stage constraints across all agents.
    pub fn total_constraints(&self) -> usize {
        self.constraints.iter().map(|c| c.len()).sum()
    }
}

impl std::fmt::Debug for GameProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GameProblem")
            .field("num_agents", &self.num_agents())
            .field("horizon", &self.horizon)
            .field("state_dim", &self.state_dim)
            .field("control_dims", &self.partition.dims)
            .field("dt", &self.dt)
            .finish()
    }
}

/// A state/control trajectory: `T+1` states and `T` joint controls.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    /// True when re-rolling the stored controls from `states[0]` reproduces
    /// the stored states within `tol` (infinity norm per step).
    pub fn is_dynamically_consistent(&self, problem: &GameProblem, tol: f64) -> bool {
        let mut x = self.states[0].clone();
        for (t, u) in self.controls.iter().enumerate() {
            x = problem.dynamics().step(&x, u);
            if (&x - &self.states[t + 1]).amax() > tol {
                return false;
            }
        }
        true
    }

    /// Maximum violation `max(0, h)` over all agents, stages and constraints.
    pub fn max_constraint_violation(&self, problem: &GameProblem) -> f64 {
        let mut worst: f64 = 0.0;
        for set in problem.constraint_sets() {
            for t in 0..self.len() {
                for c in set.iter() {
                    worst = worst.max(c.value(t, &self.states[t], &self.controls[t]).max(0.0));
                }
            }
        }
        worst
    }
}

/// Simulates the dynamics forward from `x0` under an open-loop control
/// sequence of length `T`.
pub fn rollout(problem: &GameProblem, x0: &DVector<f64>, controls: &[DVector<f64>]) -> Result<Trajectory> {
    if controls.len() != problem.horizon() {
        return Err(Error::Config(format!(
            "expected {} controls, got {}",
            problem.horizon(),
            controls.len()
        )));
    }
    if x0.len() != problem.state_dim() {
        return Err(Error::Config(format!(
            "initial state dim {} does not match problem dim {}",
            x0.len(),
            problem.state_dim()
        )));
    }
    let n_u = problem.control_dim();
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(x0.clone());
    for (t, u) in controls.iter().enumerate() {
        if u.len() != n_u {
            return Err(Error::Config(format!(
                "control at step {t} has dim {}, expected {n_u}",
                u.len()
            )));
        }
        let next = problem.dynamics().step(states.last().unwrap(), u);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model(format!("non-finite state produced at step {t}")));
        }
        states.push(next);
    }
    Ok(Trajectory {
        states,
        controls: controls.to_vec(),
    })
}

/// Zero joint controls for a problem's full horizon.
pub fn zero_controls(problem: &GameProblem) -> Vec<DVector<f64>> {
    vec![DVector::zeros(problem.control_dim()); problem.horizon()]
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let mt = m.transpose();
    *m += mt;
    *m *= 0.5;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_blocks_are_contiguous() {
        let p = ControlPartition::new(vec![2, 3, 1]).unwrap();
        assert_eq!(p.total_dim(), 6);
        assert_eq!(p.block(0), 0..2);
        assert_eq!(p.block(1), 2..5);
        assert_eq!(p.block(2), 5..6);
    }

    #[test]
    fn partition_rejects_empty_blocks() {
        assert!(ControlPartition::new(vec![]).is_err());
        assert!(ControlPartition::new(vec![2, 0]).is_err());
    }

    #[test]
    fn rollout_unicycle_unit_speed_advances_x() {
        let dyn_ = MultiUnicycle::new(1, 0.1);
        let x0 = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        let u = DVector::zeros(2);
        let next = dyn_.step(&x0, &u);
        let expect = DVector::from_vec(vec![0.1, 0.0, 0.0, 1.0, 0.0]);
        assert!((next - expect).amax() < 1e-15);
    }

    #[test]
    fn rollout_fixed_point_dynamics_keeps_state() {
        // f(x, u) = x regardless of controls.
        let n_x = 3;
        let dyn_ = LinearDynamics::new(
            DMatrix::identity(n_x, n_x),
            DMatrix::zeros(n_x, 2),
            DVector::zeros(n_x),
        );
        let problem = GameProblem::new(
            Arc::new(dyn_),
            vec![Arc::new(QuadraticCost::pure_control(
                n_x,
                DMatrix::identity(2, 2),
            ))],
            vec![ConstraintSet::empty()],
            ControlPartition::new(vec![2]).unwrap(),
            4,
            0.1,
        )
        .unwrap();
        let x0 = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let controls = vec![DVector::from_vec(vec![3.0, -1.0]); 4];
        let traj = rollout(&problem, &x0, &controls).unwrap();
        for x in &traj.states {
            assert!((x - &x0).amax() < 1e-15);
        }
        assert!(traj.is_dynamically_consistent(&problem, 1e-12));
    }

    #[test]
    fn rollout_triple_integrator_matches_hand_recursion() {
        // One axis, constant jerk 1, dt = 0.1, three steps of the explicit
        // Euler chain p += dt v, v += dt a, a += dt j.
        let spec = TripleIntegratorSpec {
            axes: 1,
            dt: 0.1,
            horizon: 3,
            ..TripleIntegratorSpec::default()
        };
        let problem = make_triple_integrator(&spec).unwrap();
        let x0 = DVector::zeros(3);
        let controls = vec![DVector::from_vec(vec![1.0]); 3];
        let traj = rollout(&problem, &x0, &controls).unwrap();
        let expect = DVector::from_vec(vec![0.001, 0.03, 0.3]);
        assert!((traj.states[3].clone() - expect).amax() < 1e-12);
    }

    #[test]
    fn rollout_rejects_dimension_mismatch() {
        let spec = TripleIntegratorSpec::default();
        let problem = make_triple_integrator(&spec).unwrap();
        let bad_x0 = DVector::zeros(problem.state_dim() + 1);
        let controls = zero_controls(&problem);
        assert!(matches!(
            rollout(&problem, &bad_x0, &controls),
            Err(Error::Config(_))
        ));
        let x0 = DVector::zeros(problem.state_dim());
        let short: Vec<_> = controls[..controls.len() - 1].to_vec();
        assert!(matches!(rollout(&problem, &x0, &short), Err(Error::Config(_))));
    }

    #[test]
    fn reroll_is_idempotent() {
        let problem = make_collision_avoidance(&AvoidanceSpec::default()).unwrap();
        let x0 = scenarios::avoidance_initial_state(&AvoidanceSpec::default());
        let mut controls = zero_controls(&problem);
        for (t, u) in controls.iter_mut().enumerate() {
        for k in 0..u.len() {
                u[k] = 0.3 * ((t * 7 + k * 3) as f64).sin();
            }
        }
        let traj = rollout(&problem, &x0, &controls).unwrap();
        let again = rollout(&problem, &traj.states[0], &traj.controls).unwrap();
        for (a, b) in traj.states.iter().zip(again.states.iter()) {
            assert_eq!(a, b);
        }
    }
}
