//! Quadratic expansions and the Gaussian feedback policy.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::problem::ControlPartition;
use crate::{Error, Result};

/// One agent's quadratic model of its state-action value around the
/// nominal point, in delta coordinates.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AgentQ {
    /// Running cost at the nominal plus the next value's cost part.
    pub cost_constant: f64,
    /// Accumulated entropy offset carried over from the next timestep.
    pub entropy_carry: f64,
    pub qx: DVector<f64>,
    pub qu: DVector<f64>,
    pub qxx: DMatrix<f64>,
    /// Control rows by state columns.
    pub qux: DMatrix<f64>,
    pub quu: DMatrix<f64>,
}

impl AgentQ {
    /// The agent's own-control diagonal block of `quu`.
    pub fn own_block(&self, partition: &ControlPartition, agent: usize) -> DMatrix<f64> {
        let b = partition.block(agent);
        self.quu.view((b.start, b.start), (b.len(), b.len())).into()
    }

    /// The `(j, j)` diagonal block of `quu` for any agent `j`.
    pub fn diag_block(&self, partition: &ControlPartition, j: usize) -> DMatrix<f64> {
        let b = partition.block(j);
        self.quu.view((b.start, b.start), (b.len(), b.len())).into()
    }
}

/// Per-timestep quadratic models for every agent.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct QExpansion {
    pub agents: Vec<AgentQ>,
}

/// One agent's quadratic value model at a timestep. The state-independent
/// entropy offset accumulates additively across timesteps and is stored
/// apart from the cost part.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AgentValue {
    /// Cost-to-go part at the nominal state.
    pub value: f64,
    /// Accumulated entropy offset (zero at the terminal step).
    pub entropy: f64,
    pub vx: DVector<f64>,
    pub vxx: DMatrix<f64>,
}

impl AgentValue {
    /// Total value constant at the nominal state.
    pub fn total(&self) -> f64 {
        self.value + self.entropy
    }

    /// Evaluates the quadratic model at a state offset `dx` from nominal.
    pub fn evaluate(&self, dx: &DVector<f64>) -> f64 {
        self.total() + self.vx.dot(dx) + 0.5 * dx.dot(&(&self.vxx * dx))
    }
}

/// Per-timestep value models for every agent.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ValueExpansion {
    pub agents: Vec<AgentValue>,
}

/// Solver knobs for one mode solve.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Entropy temperature; zero disables the entropy terms and recovers
    /// the deterministic game solver.
    pub alpha: f64,
    pub max_iterations: usize,
    /// Stationarity tolerance for the backward/forward loop.
    pub tolerance: f64,
    /// Step sizes tried are `2^0 .. 2^-(max_linesearch_steps-1)`.
    pub max_linesearch_steps: usize,
    /// Starting value when regularization ramps up after a failure.
    pub regularization_floor: f64,
    pub regularization_max: f64,
    /// Project per-agent state Hessians of the stage costs onto the PSD
    /// cone inside the backward pass. Gradients are untouched, so model
    /// audits are unaffected; exact quadratics stay exact.
    pub convexify_state_hessians: bool,
    /// Step scale of the damped fixed-point fallback taken when the merit
    /// search fails.
    pub fallback_step: f64,
    /// Iterations without a new best iterate before restarting from the
    /// best with more regularization.
    pub stall_patience: usize,
    /// Once the residual is within this factor of the tolerance the solver
    /// drops the merit search and polishes with pure damped steps.
    pub polish_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            max_iterations: 100,
            tolerance: 1e-4,
            max_linesearch_steps: 8,
            regularization_floor: 1e-6,
            regularization_max: 1e10,
            convexify_state_hessians: true,
            fallback_step: 0.5,
            stall_patience: 60,
            polish_factor: 100.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be finite and nonnegative, got {}",
                self.alpha
            )));
        }
        if self.tolerance <= 0.0 {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// One step of the time-indexed affine-mean Gaussian feedback policy.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PolicyStep {
    pub nominal_state: DVector<f64>,
    pub nominal_control: DVector<f64>,
    /// Joint feedforward `k`.
    pub feedforward: DVector<f64>,
    /// Joint feedback gain `K`.
    pub feedback: DMatrix<f64>,
    /// Per-agent control covariances.
    pub covariances: Vec<DMatrix<f64>>,
}

/// Time-indexed Gaussian feedback policy for all agents. The mean control
/// at `(t, x)` is `u_bar + k + K (x - x_bar)`; each agent's control is
/// jointly Gaussian around its block of the mean with its own covariance.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GaussianPolicy {
    pub steps: Vec<PolicyStep>,
    pub partition: ControlPartition,
    pub alpha: f64,
}

impl GaussianPolicy {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Joint mean control with the feedforward scaled by `eta`.
    pub fn mean_control_scaled(&self, t: usize, x: &DVector<f64>, eta: f64) -> DVector<f64> {
        let s = &self.steps[t];
        let dx = x - &s.nominal_state;
        &s.nominal_control + eta * &s.feedforward + &s.feedback * dx
    }

    /// Joint mean control at full step.
    pub fn mean_control(&self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        self.mean_control_scaled(t, x, 1.0)
    }

    /// One agent's block of the mean control.
    pub fn agent_mean(&self, agent: usize, t: usize, x: &DVector<f64>) -> DVector<f64> {
        self.partition.slice(&self.mean_control(t, x), agent)
    }

    /// Samples one agent's control at `(t, x)`.
    pub fn sample_agent<R: Rng>(
        &self,
        agent: usize,
        t: usize,
        x: &DVector<f64>,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        let mean = self.agent_mean(agent, t, x);
        let sigma = &self.steps[t].covariances[agent];
        Ok(mean + sample_gaussian(sigma, rng)?)
    }

    /// Samples the joint control: every agent draws independently from its
    /// own block.
    pub fn sample_joint<R: Rng>(&self, t: usize, x: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        let mut u = self.mean_control(t, x);
        for agent in 0..self.partition.num_agents() {
            let noise = sample_gaussian(&self.steps[t].covariances[agent], rng)?;
            let b = self.partition.block(agent);
            for (offset, idx) in b.enumerate() {
                u[idx] += noise[offset];
            }
        }
        Ok(u)
    }

    /// Log density of one agent's control under its Gaussian at `(t, x)`.
    pub fn log_density_agent(
        &self,
        agent: usize,
        t: usize,
        x: &DVector<f64>,
        u_agent: &DVector<f64>,
    ) -> Result<f64> {
        let mean = self.agent_mean(agent, t, x);
        let sigma = &self.steps[t].covariances[agent];
        gaussian_log_density(&mean, sigma, u_agent)
    }
}

fn cholesky_of(sigma: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::Solver("policy covariance is not positive definite".into()))
}

/// Draws from `N(0, sigma)`. A zero covariance yields the zero vector.
pub fn sample_gaussian<R: Rng>(sigma: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    let n = sigma.nrows();
    if sigma.amax() == 0.0 {
        return Ok(DVector::zeros(n));
    }
    let chol = cholesky_of(sigma)?;
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(chol.l() * z)
}

/// Log density of `N(mean, sigma)` at `point`.
pub fn gaussian_log_density(
    mean: &DVector<f64>,
    sigma: &DMatrix<f64>,
    point: &DVector<f64>,
) -> Result<f64> {
    let n = mean.len() as f64;
    let chol = cholesky_of(sigma)?;
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let diff = point - mean;
    let solved = chol.solve(&diff);
    let maha = diff.dot(&solved);
    Ok(-0.5 * (n * (2.0 * std::f64::consts::PI).ln() + log_det + maha))
}

/// Differential entropy of `N(*, sigma)`, `1/2 log |2 pi e sigma|`.
pub fn gaussian_entropy(sigma: &DMatrix<f64>) -> Result<f64> {
    let n = sigma.nrows() as f64;
    let chol = cholesky_of(sigma)?;
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    Ok(0.5 * (n * (1.0 + (2.0 * std::f64::consts::PI).ln()) + log_det))
}
