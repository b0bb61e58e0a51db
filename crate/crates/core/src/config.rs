//! Run configuration: TOML schema with documented defaults, scenario
//! construction and controller assembly.

use nalgebra::DVector;
use rand_chacha::rand_core::SeedableRng;
use std::path::Path;
use std::sync::Arc;

use crate::auglag::AlParams;
use crate::mpc::{
    Controller, ExecutionMode, IbrController, ModePolicyController, MpcConfig,
    MultimodalController, ScenarioInfo, UnimodalController,
};
use crate::multimodal::{fair_prior, find_modes, MixtureSampler, ModeSearchConfig};
use crate::problem::{
    avoidance_initial_state, make_collision_avoidance, make_racing, make_triple_integrator,
    racing_initial_state, AvoidanceSpec, GameProblem, MultiUnicycle, RacingSpec,
    TripleIntegratorSpec,
};
use crate::solver::{IbrConfig, SolverConfig};
use crate::{Error, Result};

/// Mode-search section of a run config.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ModesSection {
    /// Parallel solve slots (`A`).
    pub count: usize,
    /// Bank-and-reseed rounds (`K`).
    pub rounds: usize,
    pub init_noise: f64,
    /// Duplicate threshold on flattened control trajectories; omit for the
    /// scale-aware default.
    pub cluster_tolerance: Option<f64>,
}

impl Default for ModesSection {
    fn default() -> Self {
        Self {
            count: 4,
            rounds: 1,
            init_noise: 0.6,
            cluster_tolerance: None,
        }
    }
}

/// Episode section of a run config.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EpisodeSection {
    pub steps: usize,
    pub seed: u64,
    pub execution: ExecutionMode,
    /// Observation window `k` for latent-mode inference.
    pub observation_window: usize,
    /// One controller per agent: `multimodal`, `unimodal[+above|+below]`,
    /// `ibr[+above|+below]`, `mixture`.
    pub controllers: Vec<String>,
    /// Per-replan solver iteration cap inside closed-loop sessions; warm
    /// starts make long solves unnecessary there.
    pub replan_max_iterations: usize,
    pub out_dir: String,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        Self {
            steps: 60,
            seed: 0,
            execution: ExecutionMode::Mean,
            observation_window: 5,
            controllers: Vec::new(),
            replan_max_iterations: 120,
            out_dir: "out".into(),
        }
    }
}

/// A full run configuration, loadable from TOML. Every field has a
/// default, so a config may be as small as `scenario = "racing"`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// `swap2`, `swap3`, `racing` or `triple_integrator`.
    pub scenario: String,
    pub avoidance: AvoidanceSpec,
    pub racing: RacingSpec,
    pub triple_integrator: TripleIntegratorSpec,
    pub solver: SolverConfig,
    pub al: AlParams,
    pub modes: ModesSection,
    pub episode: EpisodeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: "swap2".into(),
            avoidance: AvoidanceSpec::default(),
            racing: RacingSpec::default(),
            triple_integrator: TripleIntegratorSpec::default(),
            solver: SolverConfig {
                tolerance: 1e-3,
                max_iterations: 300,
                ..SolverConfig::default()
            },
            al: AlParams::default(),
            modes: ModesSection::default(),
            episode: EpisodeSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        match self.scenario.as_str() {
            "swap2" | "swap3" | "racing" | "triple_integrator" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown scenario '{other}' (expected swap2, swap3, racing or triple_integrator)"
                )))
            }
        }
        if self.modes.count == 0 {
            return Err(Error::Config("modes.count must be at least 1".into()));
        }
        self.solver.validate()?;
        Ok(())
    }

    /// Builds the scenario problem, its initial state and the logging
    /// geometry.
    pub fn build(&self) -> Result<(Arc<GameProblem>, DVector<f64>, ScenarioInfo)> {
        match self.scenario.as_str() {
            "swap2" => {
                let spec = AvoidanceSpec {
                    agents: 2,
                    ..self.avoidance.clone()
                };
                let problem = make_collision_avoidance(&spec)?;
                let x0 = avoidance_initial_state(&spec);
                Ok((Arc::new(problem), x0, unicycle_info(2)))
            }
            "swap3" => {
                let spec = AvoidanceSpec {
                    agents: 3,
                    ..self.avoidance.clone()
                };
                let problem = make_collision_avoidance(&spec)?;
                let x0 = avoidance_initial_state(&spec);
                Ok((Arc::new(problem), x0, unicycle_info(3)))
            }
            "racing" => {
                let problem = make_racing(&self.racing)?;
                let x0 = racing_initial_state(&self.racing);
                Ok((Arc::new(problem), x0, unicycle_info(2)))
            }
            "triple_integrator" => {
                let problem = make_triple_integrator(&self.triple_integrator)?;
                let x0 = DVector::zeros(problem.state_dim());
                let info = ScenarioInfo {
                    position_offsets: vec![],
                    progress_indices: vec![0],
                };
                Ok((Arc::new(problem), x0, info))
            }
            other => Err(Error::Config(format!("unknown scenario '{other}'"))),
        }
    }

    pub fn mode_search(&self) -> ModeSearchConfig {
        ModeSearchConfig {
            num_seeds: self.modes.count,
            rounds: self.modes.rounds,
            seed: self.episode.seed,
            init_noise: self.modes.init_noise,
            cluster_tolerance: self.modes.cluster_tolerance,
            bank_slack: 1.0,
            bank_feasibility_slack: 1.0,
            exploration_max_iterations: None,
            solver: self.solver,
            al: self.al,
        }
    }

    pub fn mpc(&self) -> MpcConfig {
        let mut modes = self.mode_search();
        modes.bank_slack = 20.0;
        modes.bank_feasibility_slack = 50.0;
        MpcConfig {
            modes,
            observation_window: self.episode.observation_window,
            execution: self.episode.execution,
            ego: 0,
            replan_max_iterations: self.episode.replan_max_iterations.max(1),
            explore_slots: 1,
        }
    }

    /// Default controller assignment per scenario when the config lists
    /// none: racing pits the multimodal lead against an IBR rear committed
    /// below; avoidance scenarios sample a shared latent mode.
    pub fn controller_names(&self) -> Vec<String> {
        if !self.episode.controllers.is_empty() {
            return self.episode.controllers.clone();
        }
        match self.scenario.as_str() {
            "racing" => vec!["multimodal".into(), "ibr+below".into()],
            "swap2" => vec!["mixture".into(); 2],
            "swap3" => vec!["mixture".into(); 3],
            _ => vec!["multimodal".into()],
        }
    }

    /// Instantiates one controller per agent.
    pub fn controllers(
        &self,
        problem: &Arc<GameProblem>,
        x0: &DVector<f64>,
    ) -> Result<Vec<Box<dyn Controller>>> {
        let names = self.controller_names();
        if names.len() != problem.num_agents() {
            return Err(Error::Config(format!(
                "{} controllers configured for {} agents",
                names.len(),
                problem.num_agents()
            )));
        }
        // A shared latent draw for any `mixture` agents.
        let mixture = if names.iter().any(|n| n == "mixture") {
            let modes = Arc::new(find_modes(problem, x0, None, &self.mode_search())?);
            let prior = fair_prior(&modes, x0, self.solver.alpha)?;
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(self.episode.seed ^ 0x4D49_5854);
            let drawn = MixtureSampler::draw(&prior, &mut rng);
            Some((modes, drawn.mode))
        } else {
            None
        };

        let bias_amplitude = 0.6;
        names
            .iter()
            .enumerate()
            .map(|(agent, name)| -> Result<Box<dyn Controller>> {
                let (kind, bias) = match name.split_once('+') {
                    Some((k, "above")) => (k, bias_amplitude),
                    Some((k, "below")) => (k, -bias_amplitude),
                    Some((_, other)) => {
                        return Err(Error::Config(format!("unknown controller suffix '{other}'")))
                    }
                    None => (name.as_str(), 0.0),
                };
                match kind {
                    "multimodal" => {
                        let mut mpc = self.mpc();
                        mpc.ego = agent;
                        Ok(Box::new(MultimodalController::new(
                            Arc::clone(problem),
                            x0.clone(),
                            mpc,
                        )?))
                    }
                    "unimodal" => Ok(Box::new(UnimodalController::new(
                        Arc::clone(problem),
                        agent,
                        SolverConfig {
                            alpha: 0.0,
                            ..self.solver
                        },
                        self.al,
                        bias,
                    ))),
                    "ibr" => Ok(Box::new(IbrController::new(
                        Arc::clone(problem),
                        agent,
                        IbrConfig {
                            al: self.al,
                            inner: SolverConfig {
                                alpha: 0.0,
                                ..self.solver
                            },
                            ..IbrConfig::default()
                        },
                        bias,
                    ))),
                    "mixture" => {
                        let (modes, mode) = mixture
                            .as_ref()
                            .map(|(m, d)| (Arc::clone(m), *d))
                            .expect("mixture modes prepared above");
                        Ok(Box::new(ModePolicyController::new(
                            modes,
                            mode,
                            agent,
                            self.episode.execution,
                            self.episode.seed ^ (agent as u64) << 17,
                        )))
                    }
                    other => Err(Error::Config(format!("unknown controller '{other}'"))),
                }
            })
            .collect()
    }
}

fn unicycle_info(agents: usize) -> ScenarioInfo {
    ScenarioInfo {
        position_offsets: (0..agents).map(MultiUnicycle::state_block).collect(),
        progress_indices: (0..agents).map(MultiUnicycle::state_block).collect(),
    }
}
