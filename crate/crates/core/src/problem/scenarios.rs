//! Shipped scenario library: multi-agent collision avoidance, two-vehicle
//! corridor racing and a single-agent triple integrator.

use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

use super::{
    AffineConstraint, ConstraintSet, ControlPartition, GameProblem, MultiUnicycle, QuadraticCost,
    RacingCost, SmoothedCollisionConstraint, SoftCollisionCost, SumCost, TripleIntegrator,
};
use crate::{Error, Result};

/// Collision-avoidance game parameters. Agents are unicycles swapping
/// positions; the only inter-agent coupling is the soft collision penalty.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AvoidanceSpec {
    pub agents: usize,
    pub dt: f64,
    pub horizon: usize,
    /// Start positions; defaults place agents on a circle with antipodal
    /// goals so that every agent has to cross the center.
    pub starts: Vec<[f64; 2]>,
    pub goals: Vec<[f64; 2]>,
    pub initial_speed: f64,
    pub goal_weight: f64,
    pub stage_position_weight: f64,
    pub speed_weight: f64,
    pub turn_weight: f64,
    pub control_weight: f64,
    pub collision_weight: f64,
    pub collision_eps: f64,
}

impl Default for AvoidanceSpec {
    fn default() -> Self {
        Self {
            agents: 2,
            dt: 0.1,
            horizon: 40,
            starts: vec![],
            goals: vec![],
            initial_speed: 0.5,
            goal_weight: 20.0,
            stage_position_weight: 0.5,
            speed_weight: 0.2,
            turn_weight: 0.2,
            control_weight: 0.2,
            collision_weight: 5.0,
            collision_eps: 1e-3,
        }
    }
}

impl AvoidanceSpec {
    pub fn three_agents() -> Self {
        Self {
            agents: 3,
            ..Self::default()
        }
    }

    /// Start/goal pairs, filling in the default circle layout when the spec
    /// does not list positions.
    pub fn layout(&self) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
        if !self.starts.is_empty() {
            return (self.starts.clone(), self.goals.clone());
        }
        let n = self.agents;
        let mut starts = Vec::with_capacity(n);
        let mut goals = Vec::with_capacity(n);
        for i in 0..n {
            let angle = std::f64::consts::PI * (0.5 + 2.0 * i as f64 / n as f64);
            let (s, c) = angle.sin_cos();
            starts.push([c, s]);
            goals.push([-c, -s]);
        }
        (starts, goals)
    }
}

/// Joint initial state for the avoidance scenario: each agent starts at its
/// spec position, heading at its goal, at the spec initial speed.
pub fn avoidance_initial_state(spec: &AvoidanceSpec) -> DVector<f64> {
    let (starts, goals) = spec.layout();
    let mut x0 = DVector::zeros(spec.agents * MultiUnicycle::STATE);
    for i in 0..spec.agents {
        let b = MultiUnicycle::state_block(i);
        let heading = (goals[i][1] - starts[i][1]).atan2(goals[i][0] - starts[i][0]);
        x0[b] = starts[i][0];
        x0[b + 1] = starts[i][1];
        x0[b + 2] = heading;
        x0[b + 3] = spec.initial_speed;
    }
    x0
}

/// Builds the unicycle collision-avoidance game: quadratic goal tracking
/// per agent plus a symmetric pairwise soft collision penalty, no hard
/// constraints.
pub fn make_collision_avoidance(spec: &AvoidanceSpec) -> Result<GameProblem> {
    if !(2..=3).contains(&spec.agents) {
        return Err(Error::Config(format!(
            "avoidance scenario supports 2 or 3 agents, got {}",
            spec.agents
        )));
    }
    let (starts, goals) = spec.layout();
    if starts.len() != spec.agents || goals.len() != spec.agents {
        return Err(Error::Config(
            "starts/goals must both match the agent count".into(),
        ));
    }
    for i in 0..spec.agents {
        for j in (i + 1)..spec.agents {
            let d2 = (starts[i][0] - starts[j][0]).powi(2) + (starts[i][1] - starts[j][1]).powi(2);
            if d2 < 1e-12 {
                return Err(Error::Config(format!(
                    "agents {i} and {j} start at the same position"
                )));
            }
        }
    }

    let n = spec.agents;
    let n_x = n * MultiUnicycle::STATE;
    let n_u = n * MultiUnicycle::CONTROL;
    let dynamics = Arc::new(MultiUnicycle::new(n, spec.dt));
    let partition = ControlPartition::new(vec![MultiUnicycle::CONTROL; n])?;

    let mut costs: Vec<Arc<dyn super::Cost>> = Vec::with_capacity(n);
    for i in 0..n {
        let b = MultiUnicycle::state_block(i);
        let mut q = DMatrix::zeros(n_x, n_x);
        q[(b, b)] = spec.stage_position_weight;
        q[(b + 1, b + 1)] = spec.stage_position_weight;
        q[(b + 3, b + 3)] = spec.speed_weight;
        q[(b + 4, b + 4)] = spec.turn_weight;
        let mut qf = DMatrix::zeros(n_x, n_x);
        qf[(b, b)] = spec.goal_weight;
        qf[(b + 1, b + 1)] = spec.goal_weight;
        qf[(b + 3, b + 3)] = spec.goal_weight * 0.2;
        qf[(b + 4, b + 4)] = spec.goal_weight * 0.2;
        let mut x_ref = DVector::zeros(n_x);
        x_ref[b] = goals[i][0];
        x_ref[b + 1] = goals[i][1];
        let mut r = DMatrix::zeros(n_u, n_u);
        let c = partition.block(i).start;
        r[(c, c)] = spec.control_weight;
        r[(c + 1, c + 1)] = spec.control_weight;
        let tracking = Arc::new(QuadraticCost::new(q, r, qf, x_ref));

        let pairs: Vec<(usize, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (b, MultiUnicycle::state_block(j)))
            .collect();
        let collision = Arc::new(SoftCollisionCost::new(
            pairs,
            spec.collision_weight,
            spec.collision_eps,
            n_x,
            n_u,
        ));
        costs.push(Arc::new(SumCost::new(
            vec![tracking as Arc<dyn super::Cost>, collision],
            n_x,
            n_u,
        )));
    }

    GameProblem::new(
        dynamics,
        costs,
        vec![ConstraintSet::empty(); n],
        partition,
        spec.horizon,
        spec.dt,
    )
}

/// Two-vehicle corridor racing parameters. The corridor runs along the x
/// axis and progress is the x coordinate. Agent 0 is the lead vehicle.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RacingSpec {
    pub dt: f64,
    pub horizon: usize,
    pub track_half_width: f64,
    /// Per-agent body radii, lead first.
    pub radius: [f64; 2],
    /// Per-agent speed limits; the lead must be slower than the rear.
    pub max_speed: [f64; 2],
    pub control_weight: f64,
    pub progress_weight: f64,
    /// Lead's head start along the corridor. Must leave braking headroom
    /// beyond the contact distance, or the first steps are infeasible by
    /// construction.
    pub start_gap: f64,
    /// Logistic width of the collision-burden switch, in progress units.
    pub switch_width: f64,
    /// Hysteresis of the burden handover: the rear keeps the collision
    /// burden until it leads by this margin, and the lead stays free until
    /// it trails by it.
    pub ownership_hysteresis: f64,
    /// Rear's initial lateral offset; the sign scripts which side it
    /// naturally attempts to pass on.
    pub rear_offset: f64,
}

impl Default for RacingSpec {
    fn default() -> Self {
        Self {
            dt: 0.1,
            horizon: 40,
            track_half_width: 1.0,
            radius: [0.25, 0.25],
            max_speed: [1.0, 1.4],
            control_weight: 0.1,
            progress_weight: 1.0,
            start_gap: 0.9,
            switch_width: 0.05,
            ownership_hysteresis: 0.2,
            rear_offset: 0.0,
        }
    }
}

/// Joint initial state for the racing scenario: both vehicles at their
/// speed limits, lead ahead by the start gap on the centerline, rear
/// laterally offset by `rear_offset` (its scripted overtake side).
pub fn racing_initial_state(spec: &RacingSpec) -> DVector<f64> {
    let mut x0 = DVector::zeros(2 * MultiUnicycle::STATE);
    x0[0] = spec.start_gap;
    x0[3] = spec.max_speed[0];
    x0[5] = 0.0;
    x0[6] = spec.rear_offset;
    x0[8] = spec.max_speed[1];
    x0
}

/// Builds the two-vehicle racing game: each agent maximizes its progress
/// lead under control effort, subject to corridor bounds, a speed limit and
/// a separation constraint owned by whichever vehicle trails in progress.
pub fn make_racing(spec: &RacingSpec) -> Result<GameProblem> {
    if spec.start_gap <= spec.radius[0] + spec.radius[1] + 0.1 {
        return Err(Error::Config(format!(
            "start gap {} leaves no headroom over the contact distance {}",
            spec.start_gap,
            spec.radius[0] + spec.radius[1]
        )));
    }
    if spec.max_speed[0] >= spec.max_speed[1] {
        return Err(Error::Config(format!(
            "lead speed limit {} must be below the rear's {}",
            spec.max_speed[0], spec.max_speed[1]
        )));
    }
    for (i, r) in spec.radius.iter().enumerate() {
        if *r >= spec.track_half_width {
            return Err(Error::Config(format!(
                "agent {i} radius {r} does not fit the half width {}",
                spec.track_half_width
            )));
        }
    }

    let n: usize = 2;
    let n_x = n * MultiUnicycle::STATE;
    let n_u = n * MultiUnicycle::CONTROL;
    let dynamics = Arc::new(MultiUnicycle::new(n, spec.dt));
    let partition = ControlPartition::new(vec![MultiUnicycle::CONTROL; n])?;
    let radius_sum = spec.radius[0] + spec.radius[1];

    let mut costs: Vec<Arc<dyn super::Cost>> = Vec::with_capacity(n);
    let mut constraints = Vec::with_capacity(n);
    for i in 0..n {
        let other = 1 - i;
        let own_b = MultiUnicycle::state_block(i);
        let other_b = MultiUnicycle::state_block(other);
        costs.push(Arc::new(RacingCost::new(
            partition.block(i).start,
            DMatrix::identity(2, 2) * spec.control_weight,
            own_b,
            other_b,
            spec.progress_weight,
            n_x,
            n_u,
        )));

        let lateral_room = spec.track_half_width - spec.radius[i];
        let set = ConstraintSet::new(vec![
            Arc::new(AffineConstraint::state_upper(
                "track_upper",
                n_x,
                n_u,
                own_b + 1,
                lateral_room,
            )),
            Arc::new(AffineConstraint::state_lower(
                "track_lower",
                n_x,
                n_u,
                own_b + 1,
                lateral_room,
            )),
            Arc::new(AffineConstraint::state_upper(
                "velocity",
                n_x,
                n_u,
                own_b + 3,
                spec.max_speed[i],
            )),
            Arc::new(SmoothedCollisionConstraint::new(
                "collision",
                own_b,
                other_b,
                own_b,
                other_b,
                radius_sum,
                spec.switch_width,
                // Agent 0 leads by role: it takes the burden only once
                // clearly overtaken; the rear keeps it until clearly ahead.
                if i == 0 {
                    -spec.ownership_hysteresis
                } else {
                    spec.ownership_hysteresis
                },
                n_x,
                n_u,
            )),
        ]);
        constraints.push(set);
    }

    GameProblem::new(dynamics, costs, constraints, partition, spec.horizon, spec.dt)
}

/// Single-agent triple integrator parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TripleIntegratorSpec {
    pub axes: usize,
    pub dt: f64,
    pub horizon: usize,
    pub goal: Vec<f64>,
    pub position_weight: f64,
    pub velocity_weight: f64,
    pub terminal_weight: f64,
    pub control_weight: f64,
}

impl Default for TripleIntegratorSpec {
    fn default() -> Self {
        Self {
            axes: 2,
            dt: 0.1,
            horizon: 50,
            goal: vec![],
            position_weight: 0.1,
            velocity_weight: 0.05,
            terminal_weight: 10.0,
            control_weight: 0.1,
        }
    }
}

/// Builds a single-agent jerk-controlled triple-integrator tracking problem
/// (one chain per axis).
pub fn make_triple_integrator(spec: &TripleIntegratorSpec) -> Result<GameProblem> {
    if spec.axes == 0 {
        return Err(Error::Config("need at least one axis".into()));
    }
    let n_x = 3 * spec.axes;
    let n_u = spec.axes;
    let goal = if spec.goal.is_empty() {
        vec![1.0; spec.axes]
    } else if spec.goal.len() == spec.axes {
        spec.goal.clone()
    } else {
        return Err(Error::Config(format!(
            "goal has {} entries for {} axes",
            spec.goal.len(),
            spec.axes
        )));
    };

    let mut q = DMatrix::zeros(n_x, n_x);
    let mut qf = DMatrix::zeros(n_x, n_x);
    let mut x_ref = DVector::zeros(n_x);
    for k in 0..spec.axes {
        let b = 3 * k;
        q[(b, b)] = spec.position_weight;
        q[(b + 1, b + 1)] = spec.velocity_weight;
        qf[(b, b)] = spec.terminal_weight;
        qf[(b + 1, b + 1)] = spec.terminal_weight * 0.2;
        qf[(b + 2, b + 2)] = spec.terminal_weight * 0.05;
        x_ref[b] = goal[k];
    }
    let r = DMatrix::identity(n_u, n_u) * spec.control_weight;

    GameProblem::new(
        Arc::new(TripleIntegrator::new(spec.axes, spec.dt)),
        vec![Arc::new(QuadraticCost::new(q, r, qf, x_ref))],
        vec![ConstraintSet::empty()],
        ControlPartition::new(vec![n_u])?,
        spec.horizon,
        spec.dt,
    )
}
