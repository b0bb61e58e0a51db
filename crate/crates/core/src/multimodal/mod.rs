//! Multi-mode orchestration and latent-mode inference: parallel equilibrium
//! discovery with clustering, mode priors, the Bayesian posterior over the
//! latent mode, the belief-averaged one-step ego solve and mixture-policy
//! sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::auglag::AlParams;
use crate::log::log_info;
use crate::problem::{ControlPartition, GameProblem, Trajectory};
use crate::solver::{
    forward_pass_sampled, solve_mode, GaussianPolicy, QExpansion, SolveOutcome, SolveStatus,
    SolverConfig, ValueExpansion,
};
use crate::{Error, Result};

mod belief;

pub use belief::{
    ego_prior, fair_prior, mode_posterior, mode_posterior_offset, Belief, BeliefSource,
    ObservationBuffer, ObservedStep,
};

/// One converged local generalized Nash equilibrium.
#[derive(Clone, serde::Serialize, serde::Deserialize)]
pub struct ModeSolution {
    /// Mode index after clustering.
    pub index: usize,
    pub solve: SolveOutcome,
}

impl ModeSolution {
    pub fn trajectory(&self) -> &Trajectory {
        &self.solve.trajectory
    }

    pub fn policy(&self) -> &GaussianPolicy {
        &self.solve.policy
    }

    pub fn values(&self) -> &[ValueExpansion] {
        &self.solve.values
    }

    pub fn q_expansion(&self, t: usize) -> &QExpansion {
        &self.solve.q_expansions[t]
    }

    /// Agent `i`'s quadratic value model at plan step `t`, evaluated at `x`.
    pub fn value_at(&self, agent: usize, t: usize, x: &DVector<f64>) -> f64 {
        let dx = x - &self.solve.trajectory.states[t];
        self.solve.values[t].agents[agent].evaluate(&dx)
    }
}

/// Settings for the parallel mode search.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ModeSearchConfig {
    /// Number of parallel solve slots (`A`).
    pub num_seeds: usize,
    /// Bank-and-reseed rounds (`K`).
    pub rounds: usize,
    /// Base RNG seed; slot streams derive deterministically from it.
    pub seed: u64,
    /// Scale of the smooth random control perturbations applied to cold
    /// seeds.
    pub init_noise: f64,
    /// Distance under which two mean control trajectories count as the
    /// same mode. Defaults to `0.1 sqrt(T n_u)`.
    pub cluster_tolerance: Option<f64>,
    /// Residual slack for banking: a feasible slot whose stationarity is
    /// within this factor of the tolerance still banks. One keeps banking
    /// strict; receding-horizon callers loosen it so near-stationary
    /// re-solves keep their modes alive.
    pub bank_slack: f64,
    /// Feasibility slack for banking, as a factor on the outer-loop
    /// tolerance.
    pub bank_feasibility_slack: f64,
    /// Iteration budget for cold exploration slots when it should differ
    /// from the warm slots' budget.
    pub exploration_max_iterations: Option<usize>,
    pub solver: SolverConfig,
    pub al: AlParams,
}

impl Default for ModeSearchConfig {
    fn default() -> Self {
        Self {
            num_seeds: 4,
            rounds: 1,
            seed: 0,
            init_noise: 0.6,
            cluster_tolerance: None,
            bank_slack: 1.0,
            bank_feasibility_slack: 1.0,
            exploration_max_iterations: None,
            solver: SolverConfig::default(),
            al: AlParams::default(),
        }
    }
}

impl ModeSearchConfig {
    pub fn cluster_tolerance_for(&self, problem: &GameProblem) -> f64 {
        self.cluster_tolerance
            .unwrap_or_else(|| 0.1 * ((problem.horizon() * problem.control_dim()) as f64).sqrt())
    }
}

fn slot_rng(seed: u64, slot: usize, round: usize) -> ChaCha12Rng {
    let stream = seed
        ^ (slot as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (round as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    ChaCha12Rng::seed_from_u64(stream)
}

/// Smooth random perturbation: low-frequency sinusoids per control
/// channel. The fundamental keeps a substantial phase-aligned amplitude so
/// each draw commits to a definite swerve direction, and that direction is
/// shared by the matching channel of every agent: seeds then push the whole
/// group toward one side, which is where the interesting coupled equilibria
/// live. Higher harmonics add randomized texture. Negative `scale` mirrors
/// the whole perturbation.
fn smooth_noise(
    horizon: usize,
    partition: &ControlPartition,
    scale: f64,
    rng: &mut ChaCha12Rng,
) -> Vec<DVector<f64>> {
    let n_u = partition.total_dim();
    let max_block = (0..partition.num_agents())
        .map(|i| partition.agent_dim(i))
        .max()
        .unwrap_or(0);
    let offset_direction: Vec<f64> = (0..max_block)
        .map(|_| if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 })
        .collect();
    let offset_of = |k: usize| {
        (0..partition.num_agents())
            .find_map(|i| {
                let b = partition.block(i);
                b.contains(&k).then(|| k - b.start)
            })
            .unwrap_or(0)
    };
    let mut amp = vec![[0.0; 3]; n_u];
    let mut phase = vec![[0.0; 3]; n_u];
    for k in 0..n_u {
        let direction = offset_direction[offset_of(k)];
        amp[k][0] = scale * direction * rng.random_range(0.5..1.0);
        phase[k][0] = 0.0;
        for h in 1..3 {
            amp[k][h] = scale * rng.random_range(-1.0..1.0) / (2 * h) as f64;
            phase[k][h] = rng.random_range(0.0..std::f64::consts::TAU);
        }
    }
    (0..horizon)
        .map(|t| {
            DVector::from_fn(n_u, |k, _| {
                let s = t as f64 / horizon as f64;
                (0..3)
                    .map(|h| {
                        amp[k][h] * (std::f64::consts::TAU * (h + 1) as f64 * s + phase[k][h]).sin()
                    })
                    .sum()
            })
        })
        .collect()
}

fn add_controls(base: &[DVector<f64>], noise: &[DVector<f64>]) -> Vec<DVector<f64>> {
    base.iter().zip(noise).map(|(b, n)| b + n).collect()
}

/// Per-slot diagnostics from a mode search.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SlotReport {
    pub slot: usize,
    pub round: usize,
    pub status: SolveStatus,
    pub stationarity: f64,
    pub feasibility: f64,
}

/// A slot's final iterate from the last round, for warm starting the next
/// search.
pub struct SlotOutcome {
    pub converged: bool,
    pub controls: Vec<DVector<f64>>,
    pub al: crate::auglag::AlState,
}

/// Initial guess for one mode slot: a control sequence, optionally with a
/// carried augmented-Lagrangian state.
#[derive(Clone)]
pub struct WarmStart {
    pub controls: Vec<DVector<f64>>,
    pub al: Option<crate::auglag::AlState>,
}

impl WarmStart {
    pub fn cold(controls: Vec<DVector<f64>>) -> Self {
        Self { controls, al: None }
    }
}

/// Clustered modes plus per-slot iterates.
pub struct ModeSearch {
    pub modes: Vec<ModeSolution>,
    pub slots: Vec<SlotOutcome>,
}

/// Runs `A` equilibrium solves in parallel from distinct initial guesses,
/// banks converged ones, reseeds slots by sampling the solved policies for
/// further rounds, and returns the clustered distinct modes.
///
/// `warm_start` provides the first slots' initial control sequences
/// (typically last step's shifted solutions).
pub fn find_modes(
    problem: &GameProblem,
    x0: &DVector<f64>,
    warm_start: Option<&[WarmStart]>,
    config: &ModeSearchConfig,
) -> Result<Vec<ModeSolution>> {
    find_modes_detailed(problem, x0, warm_start, config).map(|search| search.modes)
}

/// [`find_modes`] variant that also returns each slot's final iterate, so
/// receding-horizon callers can warm-start every slot next step.
pub fn find_modes_detailed(
    problem: &GameProblem,
    x0: &DVector<f64>,
    warm_start: Option<&[WarmStart]>,
    config: &ModeSearchConfig,
) -> Result<ModeSearch> {
    if config.num_seeds == 0 {
        return Err(Error::Config("mode search needs at least one seed".into()));
    }
    let horizon = problem.horizon();
    let n_u = problem.control_dim();
    let _ = n_u;
    let mut banked: Vec<SolveOutcome> = Vec::new();
    let mut reports: Vec<SlotReport> = Vec::new();
    // Cold slots explore with antithetic pairs of smooth perturbations:
    // each noise draw is used with both signs, so mirror-symmetric basins
    // are seeded from both sides.
    let mut seeds: Vec<WarmStart> = (0..config.num_seeds)
        .map(|slot| {
            if let Some(warm) = warm_start {
                if slot < warm.len() {
                    return warm[slot].clone();
                }
            }
            let base = vec![DVector::zeros(n_u); horizon];
            let warm_slots = warm_start.map_or(0, <[_]>::len);
            if slot == 0 && warm_slots == 0 {
                return WarmStart::cold(base);
            }
            let explore_rank = slot - warm_slots.max(1);
            let pair = explore_rank / 2;
            let sign = if explore_rank % 2 == 0 { 1.0 } else { -1.0 };
            let mut rng = slot_rng(config.seed, pair, 0);
            let noise = smooth_noise(
                horizon,
                problem.partition(),
                sign * config.init_noise,
                &mut rng,
            );
            WarmStart::cold(add_controls(&base, &noise))
        })
        .collect();

    let warm_slots = warm_start.map_or(0, <[_]>::len);
    let mut slots: Vec<SlotOutcome> = Vec::new();
    for round in 0..config.rounds {
        let outcomes: Vec<Result<SolveOutcome>> = seeds
            .par_iter()
            .enumerate()
            .map(|(slot, seed)| {
                let mut solver = config.solver;
                if round == 0 && slot >= warm_slots {
                    if let Some(budget) = config.exploration_max_iterations {
                        solver.max_iterations = budget;
                    }
                }
                crate::solver::solve_mode_warm(
                    problem,
                    x0,
                    &seed.controls,
                    &solver,
                    &config.al,
                    seed.al.clone(),
                )
            })
            .collect();

        let mut next_seeds = Vec::with_capacity(config.num_seeds);
        slots = Vec::with_capacity(config.num_seeds);
        for (slot, outcome) in outcomes.into_iter().enumerate() {
            let outcome = outcome?;
            reports.push(SlotReport {
                slot,
                round,
                status: outcome.status,
                stationarity: outcome.stationarity,
                feasibility: outcome.feasibility,
            });
            slots.push(SlotOutcome {
                converged: outcome.converged(),
                controls: outcome.trajectory.controls.clone(),
                al: outcome.al.clone(),
            });
            // Reseed the slot by sampling the solved policy; extra smooth
            // noise pushes the sample toward unexplored basins.
            if round + 1 < config.rounds {
                let mut rng = slot_rng(config.seed, slot, round + 1);
                let sampled = forward_pass_sampled(problem, &outcome.policy, x0, 1.0, &mut rng)
                    .map(|t| t.controls)
                    .unwrap_or_else(|_| outcome.trajectory.controls.clone());
                let noise =
                    smooth_noise(horizon, problem.partition(), config.init_noise, &mut rng);
                next_seeds.push(WarmStart {
                    controls: add_controls(&sampled, &noise),
                    al: Some(outcome.al.clone()),
                });
            }
            let bankable = outcome.converged()
                || (outcome.feasibility <= config.al.tolerance * config.bank_feasibility_slack
                    && outcome.stationarity <= config.solver.tolerance * config.bank_slack);
            if bankable {
                banked.push(outcome);
            }
        }
        seeds = next_seeds;
    }

    if banked.is_empty() {
        return Err(Error::Solver(format!(
            "no mode converged; slot reports: {}",
            serde_json::to_string(&reports).unwrap_or_default()
        )));
    }
    let tol = config.cluster_tolerance_for(problem);
    Ok(ModeSearch {
        modes: cluster_modes(banked, tol),
        slots,
    })
}

fn flat_controls(s: &SolveOutcome) -> DVector<f64> {
    let n_u = s.trajectory.controls[0].len();
    DVector::from_fn(s.trajectory.controls.len() * n_u, |i, _| {
        s.trajectory.controls[i / n_u][i % n_u]
    })
}

/// Removes duplicate equilibria: k-means on flattened mean control
/// trajectories where the cluster count is chosen by merging centroids
/// closer than `tolerance`; the lowest-residual member represents each
/// cluster.
pub fn cluster_modes(solutions: Vec<SolveOutcome>, tolerance: f64) -> Vec<ModeSolution> {
    if solutions.is_empty() {
        return Vec::new();
    }
    let features: Vec<DVector<f64>> = solutions.iter().map(flat_controls).collect();

    // Start from singleton clusters and merge centroids within tolerance.
    let mut assignment: Vec<usize> = (0..solutions.len()).collect();
    let mut centroids: Vec<Option<DVector<f64>>> = features.iter().cloned().map(Some).collect();
    loop {
        let live: Vec<usize> = (0..centroids.len())
            .filter(|&c| centroids[c].is_some())
            .collect();
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, &a) in live.iter().enumerate() {
            for &b in &live[i + 1..] {
                let d = (centroids[a].as_ref().unwrap() - centroids[b].as_ref().unwrap()).norm();
                if best.is_none() || d < best.unwrap().0 {
                    best = Some((d, a, b));
                }
            }
        }
        match best {
            Some((d, a, b)) if d < tolerance => {
                for slot in assignment.iter_mut() {
                    if *slot == b {
                        *slot = a;
                    }
                }
                centroids[b] = None;
                let members: Vec<usize> = assignment
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &c)| (c == a).then_some(i))
                    .collect();
                let mut mean = DVector::zeros(features[0].len());
                for &m in &members {
                    mean += &features[m];
                }
                centroids[a] = Some(mean / members.len() as f64);
            }
            _ => break,
        }
    }

    // A couple of Lloyd passes settle the assignments.
    for _ in 0..2 {
        let live: Vec<usize> = (0..centroids.len())
            .filter(|&c| centroids[c].is_some())
            .collect();
        for (i, feat) in features.iter().enumerate() {
            let nearest = live
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let da = (feat - centroids[a].as_ref().unwrap()).norm();
                    let db = (feat - centroids[b].as_ref().unwrap()).norm();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            assignment[i] = nearest;
        }
        for &c in &live {
            let members: Vec<usize> = assignment
                .iter()
                .enumerate()
                .filter_map(|(i, &cc)| (cc == c).then_some(i))
                .collect();
            if members.is_empty() {
                centroids[c] = None;
                continue;
            }
            let mut mean = DVector::zeros(features[0].len());
            for &m in &members {
                mean += &features[m];
            }
            centroids[c] = Some(mean / members.len() as f64);
        }
    }

    // Lowest-residual representative per cluster, in stable order.
    let mut cluster_ids: Vec<usize> = assignment.clone();
    cluster_ids.sort_unstable();
    cluster_ids.dedup();
    let mut picked: Vec<usize> = Vec::new();
    for c in cluster_ids {
        let rep = assignment
            .iter()
            .enumerate()
            .filter(|(_, &cc)| cc == c)
            .map(|(i, _)| i)
            .min_by(|&a, &b| {
                solutions[a]
                    .stationarity
                    .partial_cmp(&solutions[b].stationarity)
                    .unwrap()
            })
            .unwrap();
        picked.push(rep);
    }
    picked.sort_unstable();

    let mut tagged: Vec<(usize, SolveOutcome)> = solutions
        .into_iter()
        .enumerate()
        .filter(|(i, _)| picked.contains(i))
        .collect();
    tagged.sort_by_key(|(i, _)| *i);
    tagged
        .into_iter()
        .enumerate()
        .map(|(index, (_, solve))| ModeSolution { index, solve })
        .collect()
}

/// Belief-averaged one-step ego decision.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EgoDecision {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// True when the averaged Hessian needed regularization.
    pub regularized: bool,
}

/// Solves the one-step ego problem with belief-averaged quadratic blocks.
///
/// Each mode contributes its Q model at `plan_index` rebased to absolute
/// coordinates; the ego mean solves the averaged linear system and the
/// covariance is `alpha` times the averaged Hessian's inverse. Non-ego
/// behavior enters through each mode's expansion.
pub fn solve_ego_onestep(
    belief: &Belief,
    modes: &[ModeSolution],
    plan_index: usize,
    x: &DVector<f64>,
    alpha: f64,
    ego: usize,
) -> Result<EgoDecision> {
    if modes.is_empty() {
        return Err(Error::Solver("no modes available for the ego solve".into()));
    }
    if belief.len() != modes.len() {
        return Err(Error::Config(format!(
            "belief over {} modes but {} modes given",
            belief.len(),
            modes.len()
        )));
    }
    let partition = &modes[0].solve.policy.partition;
    let block = partition.block(ego);
    let n_own = block.len();
    let n_x = x.len();

    let mut quu = DMatrix::zeros(n_own, n_own);
    let mut qux = DMatrix::zeros(n_own, n_x);
    let mut qu = DVector::zeros(n_own);
    for (a, mode) in modes.iter().enumerate() {
        let w = belief.prob(a);
        if w == 0.0 {
            continue;
        }
        if plan_index >= mode.solve.q_expansions.len() {
            return Err(Error::Config(format!(
                "plan index {plan_index} beyond mode {a} horizon"
            )));
        }
        let agent_q = &mode.solve.q_expansions[plan_index].agents[ego];
        let x_bar = &mode.solve.trajectory.states[plan_index];
        let u_bar_own: DVector<f64> = mode.solve.trajectory.controls[plan_index]
            .rows(block.start, n_own)
            .into();
        let quu_own: DMatrix<f64> = agent_q
            .quu
            .view((block.start, block.start), (n_own, n_own))
            .into();
        let qux_own: DMatrix<f64> = agent_q.qux.rows(block.start, n_own).into();
        let qu_own: DVector<f64> = agent_q.qu.rows(block.start, n_own).into();
        // Rebase the linear term so the blocks live in absolute state and
        // control coordinates.
        let qu_abs = &qu_own - &quu_own * &u_bar_own - &qux_own * x_bar;
        quu += w * quu_own;
        qux += w * qux_own;
        qu += w * qu_abs;
    }

    let mut regularized = false;
    let mut shift = 0.0;
    let chol = loop {
        let mut m = quu.clone();
        for d in 0..n_own {
            m[(d, d)] += shift;
        }
        match nalgebra::Cholesky::new(m) {
            Some(c) => break c,
            None => {
                regularized = true;
                shift = if shift == 0.0 { 1e-6 } else { shift * 2.0 };
                if shift > 1e12 {
                    return Err(Error::Solver(
                        "belief-averaged ego Hessian is irreparably indefinite".into(),
                    ));
                }
            }
        }
    };
    if regularized {
        log_info!("one-step ego solve regularized the averaged Hessian by {shift:.1e}");
    }
    let mean = -chol.solve(&(&qu + &qux * x));
    let covariance = if alpha == 0.0 {
        DMatrix::zeros(n_own, n_own)
    } else {
        let sigma = chol.inverse() * alpha;
        (&sigma + sigma.transpose()) * 0.5
    };
    Ok(EgoDecision {
        mean,
        covariance,
        regularized,
    })
}

/// A latent-mode draw with per-step policy sampling; the mode stays fixed
/// for the lifetime of the sampler (one episode).
#[derive(Debug, Clone, Copy)]
pub struct MixtureSampler {
    pub mode: usize,
}

impl MixtureSampler {
    /// Draws the latent mode once from the belief.
    pub fn draw<R: Rng>(belief: &Belief, rng: &mut R) -> Self {
        let u: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        let mut mode = belief.len() - 1;
        for a in 0..belief.len() {
            acc += belief.prob(a);
            if u < acc {
                mode = a;
                break;
            }
        }
        Self { mode }
    }

    /// Samples the joint control of the drawn mode's policy at `(t, x)`.
    pub fn sample_joint<R: Rng>(
        &self,
        modes: &[ModeSolution],
        t: usize,
        x: &DVector<f64>,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        modes[self.mode].solve.policy.sample_joint(t, x, rng)
    }
}

/// Draws a mode from the belief and samples that mode's joint control at
/// `(t, x)`. Episode-scoped sampling (one latent draw, many steps) goes
/// through [`MixtureSampler`] directly.
pub fn sample_mixture<R: Rng>(
    belief: &Belief,
    modes: &[ModeSolution],
    t: usize,
    x: &DVector<f64>,
    rng: &mut R,
) -> Result<(usize, DVector<f64>)> {
    let sampler = MixtureSampler::draw(belief, rng);
    let u = sampler.sample_joint(modes, t, x, rng)?;
    Ok((sampler.mode, u))
}

/// Rolls one stochastic episode from a fixed mode's policy.
pub fn sample_mode_rollout<R: Rng>(
    problem: &GameProblem,
    mode: &ModeSolution,
    x0: &DVector<f64>,
    rng: &mut R,
) -> Result<Trajectory> {
    let policy = &mode.solve.policy;
    let mut states = vec![x0.clone()];
    let mut controls = Vec::with_capacity(policy.len());
    for t in 0..policy.len() {
        let x = states.last().unwrap();
        let u = policy.sample_joint(t, x, rng)?;
        let next = problem.dynamics().step(x, &u);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(format!("non-finite sampled rollout at step {t}")));
        }
        controls.push(u);
        states.push(next);
    }
    Ok(Trajectory { states, controls })
}
