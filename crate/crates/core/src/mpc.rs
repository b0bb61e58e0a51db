//! Receding-horizon control: mode discovery, belief update, one-step ego
//! solve, execution and warm starting, plus closed-loop episode simulation
//! with a menu of per-agent controllers.

use nalgebra::DVector;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::sync::Arc;

use crate::auglag::AlParams;
use crate::log::{log_debug, log_info};
use crate::multimodal::{
    ego_prior, mode_posterior, mode_posterior_offset, solve_ego_onestep, Belief, EgoDecision,
    ModeSearchConfig, ModeSolution, ObservationBuffer, WarmStart,
};
use crate::problem::GameProblem;
use crate::solver::{ibr_solve_warm, sample_gaussian, solve_mode, IbrConfig, SolverConfig};
use crate::{Error, Result};

/// How planned controls are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionMode {
    /// Execute the mean control.
    Mean,
    /// Sample the Gaussian policy.
    Sample,
}

/// Settings of one receding-horizon session.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub modes: ModeSearchConfig,
    /// Observation window `k`: how many past non-ego controls condition
    /// the posterior.
    pub observation_window: usize,
    pub execution: ExecutionMode,
    /// Index of the controlled agent.
    pub ego: usize,
    /// Iteration cap for warm-started replans; the cold first solve keeps
    /// the full budget.
    pub replan_max_iterations: usize,
    /// Slots left cold every replan so new equilibria keep being searched
    /// for from the current window.
    pub explore_slots: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            modes: ModeSearchConfig {
                // Keep near-stationary, near-feasible slots alive between
                // replans.
                bank_slack: 20.0,
                bank_feasibility_slack: 50.0,
                ..ModeSearchConfig::default()
            },
            observation_window: 5,
            execution: ExecutionMode::Mean,
            ego: 0,
            replan_max_iterations: 120,
            explore_slots: 1,
        }
    }
}

/// Diagnostics from one receding-horizon step.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MpcDiagnostics {
    pub num_modes: usize,
    pub prior: Option<Belief>,
    pub belief: Option<Belief>,
    pub plan_index: usize,
    pub degraded: bool,
    /// Stationarity residual per surviving mode.
    pub mode_residuals: Vec<f64>,
}

/// Output of one receding-horizon step.
pub struct MpcStepOutput {
    /// Executed ego control.
    pub control: DVector<f64>,
    /// The belief-averaged decision behind it (absent on degraded steps).
    pub decision: Option<EgoDecision>,
    pub diagnostics: MpcDiagnostics,
}

/// One agent's receding-horizon loop state: current state estimate, the
/// observation buffer, per-mode warm starts and the step counter.
pub struct MpcSession {
    problem: Arc<GameProblem>,
    config: MpcConfig,
    state: DVector<f64>,
    buffer: ObservationBuffer,
    /// Per-slot warm starts (controls plus multiplier state), aligned to
    /// `warm_origin`.
    warm: Option<Vec<WarmStart>>,
    /// Wall step at which the warm starts' plans begin.
    warm_origin: usize,
    /// Last successful mode set and the wall step its plans start at, used
    /// when a replan fails outright.
    last_modes: Option<(Vec<ModeSolution>, usize)>,
    step_count: usize,
    last_control: DVector<f64>,
    rng: ChaCha12Rng,
}

impl MpcSession {
    pub fn new(problem: Arc<GameProblem>, x0: DVector<f64>, config: MpcConfig) -> Result<Self> {
        if config.ego >= problem.num_agents() {
            return Err(Error::Config(format!(
                "ego index {} out of range for {} agents",
                config.ego,
                problem.num_agents()
            )));
        }
        if config.observation_window + 1 >= problem.horizon() {
            return Err(Error::Config(format!(
                "observation window {} does not fit the horizon {}",
                config.observation_window,
                problem.horizon()
            )));
        }
        let ego_dim = problem.partition().agent_dim(config.ego);
        let rng = ChaCha12Rng::seed_from_u64(config.modes.seed ^ 0x4D50_4353);
        Ok(Self {
            problem,
            buffer: ObservationBuffer::new(config.observation_window),
            config,
            state: x0,
            warm: None,
            warm_origin: 0,
            last_modes: None,
            step_count: 0,
            last_control: DVector::zeros(ego_dim),
            rng,
        })
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.state
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn buffer(&self) -> &ObservationBuffer {
        &self.buffer
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    /// Runs one planning step: find modes from the inference window start,
    /// infer the belief from buffered observations, solve the one-step ego
    /// problem at the current state, and pick the executed control.
    ///
    /// On mode-search failure the step degrades to holding the previous
    /// control.
    pub fn step(&mut self) -> Result<MpcStepOutput> {
        let alpha = self.config.modes.solver.alpha;
        let ego = self.config.ego;
        // Plans start at the oldest buffered observation so buffered steps
        // index straight into the plan.
        let (plan_origin, solve_from) = match self.buffer.oldest() {
            Some(obs) => (obs.step, obs.state.clone()),
            None => (self.step_count, self.state.clone()),
        };
        let mut warm = self.aligned_warm(plan_origin);
        if let Some(w) = warm.as_mut() {
            // Leave the trailing slots cold so the search keeps probing for
            // equilibria that the warm basins have drifted away from.
            let keep = self
                .config
                .modes
                .num_seeds
                .saturating_sub(self.config.explore_slots)
                .max(1);
            w.truncate(keep);
        }
        let mut search_config = self.config.modes.clone();
        if warm.is_some() {
            let full_budget = search_config.solver.max_iterations;
            search_config.solver.max_iterations =
                full_budget.min(self.config.replan_max_iterations);
            search_config.exploration_max_iterations = Some(full_budget);
        }

        let search = match crate::multimodal::find_modes_detailed(
            &self.problem,
            &solve_from,
            warm.as_deref(),
            &search_config,
        ) {
            Ok(search) => search,
            Err(err) => {
                log_info!(
                    "mode search failed at step {}: {err}; falling back",
                    self.step_count
                );
                return self.degraded_step(alpha, ego);
            }
        };
        let modes = search.modes;
        log_info!(
            "mpc step {}: slots {:?} -> {} modes",
            self.step_count,
            search
                .slots
                .iter()
                .map(|s| if s.converged { 'C' } else { '.' })
                .collect::<String>(),
            modes.len()
        );

        let prior = ego_prior(&modes, &solve_from, alpha, ego)?;
        let belief = mode_posterior(&prior, &modes, &self.buffer, ego)?;
        let plan_index = self.buffer.len();
        let decision = solve_ego_onestep(&belief, &modes, plan_index, &self.state, alpha, ego)?;
        let control = match self.config.execution {
            ExecutionMode::Mean => decision.mean.clone(),
            ExecutionMode::Sample => {
                &decision.mean + sample_gaussian(&decision.covariance, &mut self.rng)?
            }
        };
        if control.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(format!(
                "non-finite ego control at step {}",
                self.step_count
            )));
        }
        if crate::log_enabled(crate::LogLevel::Debug) {
            let detail: Vec<String> = modes
                .iter()
                .enumerate()
                .map(|(a, m)| {
                    let states = &m.trajectory().states;
                    let now = plan_index.min(states.len() - 1);
                    let mid = (plan_index + 12).min(states.len() - 1);
                    let end = states.len() - 1;
                    format!(
                        "mode{a}: p {:.2} now(ly {:+.2} ry {:+.2}) mid(ly {:+.2} ry {:+.2}) end(lx {:+.2} rx {:+.2})",
                        belief.prob(a),
                        states[now][1],
                        states[now][6],
                        states[mid][1],
                        states[mid][6],
                        states[end][0],
                        states[end][5]
                    )
                })
                .collect();
            log_debug!(
                "mpc step {}: plan index {plan_index}, {}",
                self.step_count,
                detail.join(" | ")
            );
        }

        // Per-slot warm starts for the next step, aligned to this plan
        // origin. Converged slots keep refining their own basin; failed
        // slots reseed by sampling a banked mode's policy.
        let mut next_warm = Vec::with_capacity(search.slots.len());
        for (slot, outcome) in search.slots.iter().enumerate() {
            if outcome.converged || modes.is_empty() {
                next_warm.push(WarmStart {
                    controls: outcome.controls.clone(),
                    al: Some(outcome.al.clone()),
                });
            } else {
                let donor = &modes[slot % modes.len()];
                let resampled = crate::solver::forward_pass_sampled(
                    &self.problem,
                    donor.policy(),
                    &solve_from,
                    0.5,
                    &mut self.rng,
                )
                .map(|t| t.controls)
                .unwrap_or_else(|_| donor.trajectory().controls.clone());
                next_warm.push(WarmStart {
                    controls: resampled,
                    al: Some(donor.solve.al.clone()),
                });
            }
        }
        self.warm = Some(next_warm);
        self.warm_origin = plan_origin;
        self.last_modes = Some((modes.iter().map(|m| ModeSolution {
            index: m.index,
            solve: m.solve.clone(),
        }).collect(), plan_origin));
        self.last_control = control.clone();

        Ok(MpcStepOutput {
            control,
            decision: Some(decision),
            diagnostics: MpcDiagnostics {
                num_modes: modes.len(),
                prior: Some(prior),
                belief: Some(belief),
                plan_index,
                degraded: false,
                mode_residuals: modes.iter().map(|m| m.solve.stationarity).collect(),
            },
        })
    }

    /// Fallback when replanning fails: reuse the previous step's mode set,
    /// indexing the current time into its plans, so the executed control
    /// still reacts to the current state. Holds the previous control only
    /// when no usable plan remains.
    fn degraded_step(&mut self, alpha: f64, ego: usize) -> Result<MpcStepOutput> {
        if let Some((modes, origin)) = &self.last_modes {
            let plan_index = self.step_count.saturating_sub(*origin);
            let horizon = modes[0].solve.q_expansions.len();
            if plan_index + 1 < horizon && !modes.is_empty() {
                let anchor = modes[0].trajectory().states[0].clone();
                let prior = ego_prior(modes, &anchor, alpha, ego)?;
                let offset = self
                    .buffer
                    .oldest()
                    .map(|o| o.step.saturating_sub(*origin))
                    .unwrap_or(0);
                let belief = mode_posterior_offset(&prior, modes, &self.buffer, ego, offset)?;
                let decision = solve_ego_onestep(&belief, modes, plan_index, &self.state, alpha, ego)?;
                let control = match self.config.execution {
                    ExecutionMode::Mean => decision.mean.clone(),
                    ExecutionMode::Sample => {
                        &decision.mean + sample_gaussian(&decision.covariance, &mut self.rng)?
                    }
                };
                if control.iter().all(|v| v.is_finite()) {
                    self.last_control = control.clone();
                    return Ok(MpcStepOutput {
                        control,
                        decision: Some(decision),
                        diagnostics: MpcDiagnostics {
                            num_modes: modes.len(),
                            prior: Some(prior),
                            belief: Some(belief),
                            plan_index,
                            degraded: true,
                            mode_residuals: modes.iter().map(|m| m.solve.stationarity).collect(),
                        },
                    });
                }
            }
        }
        // Nothing usable: coast. Holding a stale acceleration open loop
        // compounds, so the zero control is the safe default.
        let ego_dim = self.problem.partition().agent_dim(ego);
        self.last_control = DVector::zeros(ego_dim);
        Ok(MpcStepOutput {
            control: self.last_control.clone(),
            decision: None,
            diagnostics: MpcDiagnostics {
                num_modes: 0,
                prior: None,
                belief: None,
                plan_index: 0,
                degraded: true,
                mode_residuals: Vec::new(),
            },
        })
    }

    fn aligned_warm(&self, plan_origin: usize) -> Option<Vec<WarmStart>> {
        let warm = self.warm.as_ref()?;
        let shift_by = plan_origin.saturating_sub(self.warm_origin);
        Some(
            warm.iter()
                .map(|seed| {
                    let mut controls = seed.controls.clone();
                    let mut al = seed.al.clone();
                    for _ in 0..shift_by {
                        controls = shift_warmstart(&controls);
                        if let Some(al) = al.as_mut() {
                            al.shift_steps();
                        }
                    }
                    WarmStart { controls, al }
                })
                .collect(),
        )
    }

    /// Records the executed joint control at the state it was applied to.
    pub fn observe(&mut self, state: DVector<f64>, joint_control: DVector<f64>) -> Result<()> {
        self.buffer.push(self.step_count, state, joint_control)
    }

    /// Advances the session to the next wall step at the new state.
    pub fn advance(&mut self, new_state: DVector<f64>) {
        self.state = new_state;
        self.step_count += 1;
    }
}

/// Shifts a control sequence one step for warm starting: drop the first
/// entry and duplicate the last.
pub fn shift_warmstart(controls: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut shifted: Vec<DVector<f64>> = controls[1..].to_vec();
    shifted.push(controls.last().unwrap().clone());
    shifted
}

/// Per-step planning output of a controller.
pub struct ControlDecision {
    /// The agent's own control block.
    pub control: DVector<f64>,
    pub belief: Option<Belief>,
    pub num_modes: usize,
    pub degraded: bool,
}

impl ControlDecision {
    fn plain(control: DVector<f64>) -> Self {
        Self {
            control,
            belief: None,
            num_modes: 0,
            degraded: false,
        }
    }
}

/// One agent's closed-loop policy.
pub trait Controller: Send {
    fn label(&self) -> &str;
    fn decide(&mut self, x: &DVector<f64>, step: usize) -> Result<ControlDecision>;
    /// Feedback after the joint step: the state controls were applied at,
    /// the joint control, and the resulting state.
    fn record(&mut self, _x: &DVector<f64>, _joint_u: &DVector<f64>, _x_next: &DVector<f64>) -> Result<()> {
        Ok(())
    }
}

/// The full multimodal pipeline behind one agent.
pub struct MultimodalController {
    label: String,
    session: MpcSession,
}

impl MultimodalController {
    pub fn new(problem: Arc<GameProblem>, x0: DVector<f64>, config: MpcConfig) -> Result<Self> {
        Ok(Self {
            label: "multimodal".into(),
            session: MpcSession::new(problem, x0, config)?,
        })
    }

    pub fn session(&self) -> &MpcSession {
        &self.session
    }
}

impl Controller for MultimodalController {
    fn label(&self) -> &str {
        &self.label
    }

    fn decide(&mut self, x: &DVector<f64>, _step: usize) -> Result<ControlDecision> {
        debug_assert_eq!(x, self.session.state());
        let out = self.session.step()?;
        Ok(ControlDecision {
            control: out.control,
            belief: out.diagnostics.belief,
            num_modes: out.diagnostics.num_modes,
            degraded: out.diagnostics.degraded,
        })
    }

    fn record(&mut self, x: &DVector<f64>, joint_u: &DVector<f64>, x_next: &DVector<f64>) -> Result<()> {
        self.session.observe(x.clone(), joint_u.clone())?;
        self.session.advance(x_next.clone());
        Ok(())
    }
}

/// Single-equilibrium receding-horizon game solver (mean execution), warm
/// started and committed to whichever basin its seed lands in.
pub struct UnimodalController {
    label: String,
    problem: Arc<GameProblem>,
    agent: usize,
    solver: SolverConfig,
    al: AlParams,
    warm: Option<Vec<DVector<f64>>>,
    /// Smooth lateral bias applied to the cold-start seed; sign selects
    /// the basin.
    init_bias: f64,
}

impl UnimodalController {
    pub fn new(
        problem: Arc<GameProblem>,
        agent: usize,
        solver: SolverConfig,
        al: AlParams,
        init_bias: f64,
    ) -> Self {
        Self {
            label: "unimodal".into(),
            problem,
            agent,
            solver,
            al,
            warm: None,
            init_bias,
        }
    }
}

/// Smooth single-period angular swerve used to bias cold starts into one
/// passing basin. Control layout is the unicycle's
/// `(linear acceleration, angular acceleration)` per agent.
pub fn swerve_seed(
    problem: &GameProblem,
    agent: usize,
    amplitude: f64,
) -> Vec<DVector<f64>> {
    let horizon = problem.horizon();
    let n_u = problem.control_dim();
    let block = problem.partition().block(agent);
    (0..horizon)
        .map(|t| {
            let mut u = DVector::zeros(n_u);
            if block.len() >= 2 {
                let phase = std::f64::consts::TAU * t as f64 / horizon as f64;
                u[block.start + 1] = amplitude * phase.sin();
            }
            u
        })
        .collect()
}

impl Controller for UnimodalController {
    fn label(&self) -> &str {
        &self.label
    }

    fn decide(&mut self, x: &DVector<f64>, _step: usize) -> Result<ControlDecision> {
        let init = match &self.warm {
            Some(w) => w.clone(),
            None => swerve_seed(&self.problem, self.agent, self.init_bias),
        };
        let outcome = solve_mode(&self.problem, x, &init, &self.solver, &self.al)?;
        let control = self
            .problem
            .partition()
            .slice(&outcome.trajectory.controls[0], self.agent);
        self.warm = Some(shift_warmstart(&outcome.trajectory.controls));
        Ok(ControlDecision {
            control,
            belief: None,
            num_modes: 1,
            degraded: !outcome.converged(),
        })
    }
}

/// Iterated-best-response agent, warm started, optionally biased toward
/// one passing side on its first solve.
pub struct IbrController {
    label: String,
    problem: Arc<GameProblem>,
    agent: usize,
    config: IbrConfig,
    warm: Option<Vec<DVector<f64>>>,
    warm_al: Option<crate::auglag::AlState>,
    init_bias: f64,
}

impl IbrController {
    pub fn new(problem: Arc<GameProblem>, agent: usize, config: IbrConfig, init_bias: f64) -> Self {
        Self {
            label: "ibr".into(),
            problem,
            agent,
            config,
            warm: None,
            warm_al: None,
            init_bias,
        }
    }
}

impl Controller for IbrController {
    fn label(&self) -> &str {
        &self.label
    }

    fn decide(&mut self, x: &DVector<f64>, _step: usize) -> Result<ControlDecision> {
        let init = match &self.warm {
            Some(w) => w.clone(),
            None => swerve_seed(&self.problem, self.agent, self.init_bias),
        };
        match ibr_solve_warm(&self.problem, x, &init, &self.config, self.warm_al.take()) {
            Ok((traj, al)) => {
                let control = self.problem.partition().slice(&traj.controls[0], self.agent);
                self.warm = Some(shift_warmstart(&traj.controls));
                let mut al = al;
                al.shift_steps();
                self.warm_al = Some(al);
                Ok(ControlDecision::plain(control))
            }
            Err(err) => {
                // Best-effort baseline: reuse the warm plan's first control
                // rather than failing the episode.
                log_info!("IBR agent {} solve failed: {err}; reusing warm plan", self.agent);
                let control = match &self.warm {
                    Some(w) => {
                        let u = self.problem.partition().slice(&w[0], self.agent);
                        self.warm = Some(shift_warmstart(w));
                        u
                    }
                    None => DVector::zeros(self.problem.partition().agent_dim(self.agent)),
                };
                Ok(ControlDecision {
                    control,
                    belief: None,
                    num_modes: 0,
                    degraded: true,
                })
            }
        }
    }
}

/// Plays back a fixed own-control sequence.
pub struct ScriptedController {
    label: String,
    controls: Vec<DVector<f64>>,
}

impl ScriptedController {
    pub fn new(controls: Vec<DVector<f64>>) -> Self {
        Self {
            label: "scripted".into(),
            controls,
        }
    }
}

impl Controller for ScriptedController {
    fn label(&self) -> &str {
        &self.label
    }

    fn decide(&mut self, _x: &DVector<f64>, step: usize) -> Result<ControlDecision> {
        let control = self
            .controls
            .get(step)
            .cloned()
            .ok_or_else(|| Error::Config(format!("scripted controller exhausted at step {step}")))?;
        Ok(ControlDecision::plain(control))
    }
}

/// Follows one fixed mode's Gaussian feedback policy (mean or sampled);
/// used to script committed non-ego behavior.
pub struct ModePolicyController {
    label: String,
    modes: Arc<Vec<ModeSolution>>,
    mode: usize,
    agent: usize,
    execution: ExecutionMode,
    rng: ChaCha12Rng,
    /// Swaps the followed mode at this wall step, if set.
    pub switch: Option<(usize, usize)>,
}

impl ModePolicyController {
    pub fn new(
        modes: Arc<Vec<ModeSolution>>,
        mode: usize,
        agent: usize,
        execution: ExecutionMode,
        seed: u64,
    ) -> Self {
        Self {
            label: "mode-policy".into(),
            modes,
            mode,
            agent,
            execution,
            rng: ChaCha12Rng::seed_from_u64(seed),
            switch: None,
        }
    }
}

impl Controller for ModePolicyController {
    fn label(&self) -> &str {
        &self.label
    }

    fn decide(&mut self, x: &DVector<f64>, step: usize) -> Result<ControlDecision> {
        if let Some((at, to)) = self.switch {
            if step == at {
                self.mode = to;
            }
        }
        let policy = &self.modes[self.mode].solve.policy;
        let t = step.min(policy.len() - 1);
        let control = match self.execution {
            ExecutionMode::Mean => policy.agent_mean(self.agent, t, x),
            ExecutionMode::Sample => policy.sample_agent(self.agent, t, x, &mut self.rng)?,
        };
        Ok(ControlDecision::plain(control))
    }
}

/// How an episode ended.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EpisodeStatus {
    Completed,
    /// A controller failed; the log holds the steps before the failure.
    ControllerFailure { step: usize, agent: usize },
}

/// Closed-loop simulation record.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EpisodeLog {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    /// Ego belief per step, when a multimodal controller produced one.
    pub beliefs: Vec<Option<Vec<f64>>>,
    pub mode_counts: Vec<usize>,
    /// Worst constraint violation per step across agents.
    pub max_violation: Vec<f64>,
    pub degraded_steps: usize,
    pub status: EpisodeStatus,
    /// Final progress coordinate per agent (empty without progress info).
    pub final_progress: Vec<f64>,
    /// Minimum pairwise center distance over the episode (infinite for a
    /// single agent).
    pub min_distance: f64,
    /// Steps with any constraint violation.
    pub violation_steps: usize,
}

/// Geometry hooks the episode logger needs from a scenario: where each
/// agent's planar position lives in the joint state and which coordinate
/// counts as progress.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ScenarioInfo {
    pub position_offsets: Vec<usize>,
    pub progress_indices: Vec<usize>,
}

/// Runs a closed-loop episode: at every step each controller plans its own
/// control, the joint control steps the true dynamics, and every
/// controller observes the outcome.
pub fn run_episode(
    problem: &GameProblem,
    x0: &DVector<f64>,
    controllers: &mut [Box<dyn Controller>],
    steps: usize,
    info: &ScenarioInfo,
) -> Result<EpisodeLog> {
    if controllers.len() != problem.num_agents() {
        return Err(Error::Config(format!(
            "{} controllers for {} agents",
            controllers.len(),
            problem.num_agents()
        )));
    }
    let mut x = x0.clone();
    let mut log = EpisodeLog {
        states: vec![x.iter().cloned().collect()],
        controls: Vec::new(),
        beliefs: Vec::new(),
        mode_counts: Vec::new(),
        max_violation: Vec::new(),
        degraded_steps: 0,
        status: EpisodeStatus::Completed,
        final_progress: Vec::new(),
        min_distance: f64::INFINITY,
        violation_steps: 0,
    };

    'steps: for step in 0..steps {
        let mut joint = DVector::zeros(problem.control_dim());
        let mut belief: Option<Vec<f64>> = None;
        let mut mode_count = 0;
        for (agent, controller) in controllers.iter_mut().enumerate() {
            match controller.decide(&x, step) {
                Ok(decision) => {
                    if decision.degraded {
                        log.degraded_steps += 1;
                    }
                    if decision.control.iter().any(|v| !v.is_finite()) {
                        log.status = EpisodeStatus::ControllerFailure { step, agent };
                        break 'steps;
                    }
                    for (offset, idx) in problem.partition().block(agent).enumerate() {
                        joint[idx] = decision.control[offset];
                    }
                    if let Some(b) = decision.belief {
                        belief = Some(b.probabilities().to_vec());
                    }
                    mode_count = mode_count.max(decision.num_modes);
                }
                Err(err) => {
                    log_info!("controller {agent} failed at step {step}: {err}");
                    log.status = EpisodeStatus::ControllerFailure { step, agent };
                    break 'steps;
                }
            }
        }

        // Worst stage-constraint violation at the executed point.
        let mut violation: f64 = 0.0;
        for set in problem.constraint_sets() {
            for c in set.iter() {
                violation = violation.max(c.value(step.min(problem.horizon() - 1), &x, &joint).max(0.0));
            }
        }
        if violation > 0.0 {
            log.violation_steps += 1;
        }

        let x_next = problem.dynamics().step(&x, &joint);
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(format!("episode diverged at step {step}")));
        }
        for controller in controllers.iter_mut() {
            controller.record(&x, &joint, &x_next)?;
        }

        // Pairwise distances for the summary.
        for i in 0..info.position_offsets.len() {
            for j in (i + 1)..info.position_offsets.len() {
                let (a, b) = (info.position_offsets[i], info.position_offsets[j]);
                let d = ((x[a] - x[b]).powi(2) + (x[a + 1] - x[b + 1]).powi(2)).sqrt();
                log.min_distance = log.min_distance.min(d);
            }
        }

        log.controls.push(joint.iter().cloned().collect());
        log.beliefs.push(belief);
        log.mode_counts.push(mode_count);
        log.max_violation.push(violation);
        x = x_next;
        log.states.push(x.iter().cloned().collect());
    }

    log.final_progress = info
        .progress_indices
        .iter()
        .map(|&idx| *log.states.last().unwrap().get(idx).unwrap_or(&f64::NAN))
        .collect();
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{
        avoidance_initial_state, make_collision_avoidance, make_triple_integrator, rollout,
        zero_controls, AvoidanceSpec, TripleIntegratorSpec,
    };

    #[test]
    fn shift_warmstart_examples() {
        let constant = vec![DVector::from_vec(vec![1.0, 2.0]); 4];
        let shifted = shift_warmstart(&constant);
        assert_eq!(shifted, constant);

        let two = vec![
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![2.0]),
        ];
        let shifted = shift_warmstart(&two);
        assert_eq!(shifted[0][0], 2.0);
        assert_eq!(shifted[1][0], 2.0);
    }

    #[test]
    fn warm_started_resolve_takes_fewer_iterations() {
        let spec = AvoidanceSpec::default();
        let problem = make_collision_avoidance(&spec).unwrap();
        let x0 = avoidance_initial_state(&spec);
        let config = SolverConfig {
            alpha: 0.0,
            tolerance: 3e-4,
            max_iterations: 400,
            ..SolverConfig::default()
        };
        let seed = swerve_seed(&problem, 0, 0.5)
            .iter()
            .zip(swerve_seed(&problem, 1, 0.5))
            .map(|(a, b)| a + b)
            .collect::<Vec<_>>();
        let first = solve_mode(&problem, &x0, &seed, &config, &AlParams::default()).unwrap();
        assert!(first.converged());
        // Advance one step along the solution, as the receding-horizon loop
        // does, then compare the shifted warm start against a cold start.
        let x1 = first.trajectory.states[1].clone();
        let warm_init = shift_warmstart(&first.trajectory.controls);
        let warm = solve_mode(&problem, &x1, &warm_init, &config, &AlParams::default()).unwrap();
        assert!(warm.converged());
        let cold_init: Vec<_> = swerve_seed(&problem, 0, 0.5)
            .iter()
            .zip(swerve_seed(&problem, 1, 0.5))
            .map(|(a, b)| a + b)
            .collect();
        let cold = solve_mode(&problem, &x1, &cold_init, &config, &AlParams::default()).unwrap();
        assert!(cold.converged());
        assert!(
            warm.iterations.len() < cold.iterations.len(),
            "warm {} vs cold {}",
            warm.iterations.len(),
            cold.iterations.len()
        );
    }

    #[test]
    fn single_mode_step_matches_unimodal_plan() {
        // On a convex problem the session's executed mean equals the plain
        // game solve's first control.
        let spec = TripleIntegratorSpec::default();
        let problem = Arc::new(make_triple_integrator(&spec).unwrap());
        let x0 = DVector::zeros(problem.state_dim());
        let mpc_config = MpcConfig {
            modes: ModeSearchConfig {
                num_seeds: 1,
                ..ModeSearchConfig::default()
            },
            ..MpcConfig::default()
        };
        let mut session = MpcSession::new(Arc::clone(&problem), x0.clone(), mpc_config.clone()).unwrap();
        let out = session.step().unwrap();
        assert!(!out.diagnostics.degraded);

        let direct = solve_mode(
            &problem,
            &x0,
            &zero_controls(&problem),
            &mpc_config.modes.solver,
            &mpc_config.modes.al,
        )
        .unwrap();
        let expect = problem.partition().slice(&direct.trajectory.controls[0], 0);
        assert!(
            (&out.control - &expect).amax() < 1e-6,
            "{:?} vs {:?}",
            out.control,
            expect
        );
        // Mean-mode execution equals the one-step decision mean exactly.
        assert_eq!(out.control, out.decision.unwrap().mean);
    }

    #[test]
    fn empty_buffer_belief_equals_prior() {
        let spec = TripleIntegratorSpec::default();
        let problem = Arc::new(make_triple_integrator(&spec).unwrap());
        let x0 = DVector::zeros(problem.state_dim());
        let mut session = MpcSession::new(
            Arc::clone(&problem),
            x0,
            MpcConfig {
                modes: ModeSearchConfig {
                    num_seeds: 2,
                    ..ModeSearchConfig::default()
                },
                ..MpcConfig::default()
            },
        )
        .unwrap();
        let out = session.step().unwrap();
        let prior = out.diagnostics.prior.unwrap();
        let belief = out.diagnostics.belief.unwrap();
        for a in 0..prior.len() {
            assert_eq!(prior.prob(a), belief.prob(a));
        }
        assert_eq!(out.diagnostics.plan_index, 0);
    }

    #[test]
    fn degraded_step_holds_previous_control() {
        let spec = TripleIntegratorSpec::default();
        let problem = Arc::new(make_triple_integrator(&spec).unwrap());
        let x0 = DVector::zeros(problem.state_dim());
        // An impossible iteration budget forces the mode search to fail.
        let mut session = MpcSession::new(
            Arc::clone(&problem),
            x0,
            MpcConfig {
                modes: ModeSearchConfig {
                    num_seeds: 1,
                    solver: SolverConfig {
                        max_iterations: 1,
                        tolerance: 1e-14,
                        ..SolverConfig::default()
                    },
                    ..ModeSearchConfig::default()
                },
                ..MpcConfig::default()
            },
        )
        .unwrap();
        let out = session.step().unwrap();
        assert!(out.diagnostics.degraded);
        assert!(out.control.iter().all(|v| v.is_finite()));
        assert_eq!(out.control, DVector::zeros(2));
    }

    #[test]
    fn closed_loop_states_are_rerollable() {
        let spec = TripleIntegratorSpec::default();
        let problem = Arc::new(make_triple_integrator(&spec).unwrap());
        let x0 = DVector::from_vec(vec![0.5, 0.0, 0.0, -0.5, 0.0, 0.0]);
        let mut controllers: Vec<Box<dyn Controller>> = vec![Box::new(
            MultimodalController::new(
                Arc::clone(&problem),
                x0.clone(),
                MpcConfig {
                    modes: ModeSearchConfig {
                        num_seeds: 1,
                        ..ModeSearchConfig::default()
                    },
                    ..MpcConfig::default()
                },
            )
            .unwrap(),
        )];
        let info = ScenarioInfo {
            position_offsets: vec![],
            progress_indices: vec![0],
        };
        let log = run_episode(&problem, &x0, &mut controllers, 6, &info).unwrap();
        assert_eq!(log.status, EpisodeStatus::Completed);
        let controls: Vec<DVector<f64>> = log
            .controls
            .iter()
            .map(|u| DVector::from_vec(u.clone()))
            .collect();
        // Pad to the problem horizon for the rollout helper.
        let mut padded = controls.clone();
        while padded.len() < problem.horizon() {
            padded.push(DVector::zeros(problem.control_dim()));
        }
        let rolled = rollout(&problem, &x0, &padded).unwrap();
        for (t, s) in log.states.iter().enumerate() {
            let logged = DVector::from_vec(s.clone());
            assert!((&rolled.states[t] - &logged).amax() < 1e-12, "step {t}");
        }
    }
}
