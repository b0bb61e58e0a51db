//! Beliefs over the discrete latent mode: priors from the mode value
//! functions and the Bayesian posterior from observed non-ego controls.

use nalgebra::DVector;
use std::collections::VecDeque;

use super::ModeSolution;
use crate::log::log_info;
use crate::{Error, Result};

/// Where a belief came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BeliefSource {
    Fair,
    Ego,
    Posterior,
}

/// Probability vector over the surviving modes.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Belief {
    probabilities: Vec<f64>,
    source: BeliefSource,
}

impl Belief {
    pub fn new(probabilities: Vec<f64>, source: BeliefSource) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::Config("belief over zero modes".into()));
        }
        if probabilities.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::Solver("belief has negative or non-finite mass".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Solver(format!("belief mass {total} is not normalized")));
        }
        let probabilities = probabilities.iter().map(|p| p / total).collect();
        Ok(Self {
            probabilities,
            source,
        })
    }

    /// Builds a belief as a softmax over log weights (stable in log space).
    pub fn from_log_weights(log_weights: &[f64], source: BeliefSource) -> Result<Self> {
        if log_weights.is_empty() {
            return Err(Error::Config("belief over zero modes".into()));
        }
        let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Solver("all belief weights underflowed".into()));
        }
        let unnorm: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
        let total: f64 = unnorm.iter().sum();
        Ok(Self {
            probabilities: unnorm.into_iter().map(|w| w / total).collect(),
            source,
        })
    }

    pub fn uniform(n: usize, source: BeliefSource) -> Self {
        Self {
            probabilities: vec![1.0 / n as f64; n],
            source,
        }
    }

    pub fn point_mass(n: usize, mode: usize, source: BeliefSource) -> Self {
        let mut probabilities = vec![0.0; n];
        probabilities[mode] = 1.0;
        Self {
            probabilities,
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn prob(&self, mode: usize) -> f64 {
        self.probabilities[mode]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn source(&self) -> BeliefSource {
        self.source
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (a, p) in self.probabilities.iter().enumerate() {
            if *p > self.probabilities[best] {
                best = a;
            }
        }
        best
    }
}

fn value_prior<F: Fn(&ModeSolution) -> f64>(
    modes: &[ModeSolution],
    alpha: f64,
    source: BeliefSource,
    summed_value: F,
) -> Result<Belief> {
    if modes.is_empty() {
        return Err(Error::Config("prior over zero modes".into()));
    }
    if alpha == 0.0 {
        // Zero-temperature limit: all mass on the lowest value, ties to the
        // lowest index.
        let mut best = 0;
        let mut best_v = summed_value(&modes[0]);
        for (a, mode) in modes.iter().enumerate().skip(1) {
            let v = summed_value(mode);
            if v < best_v {
                best_v = v;
                best = a;
            }
        }
        return Ok(Belief::point_mass(modes.len(), best, source));
    }
    let log_w: Vec<f64> = modes.iter().map(|m| -summed_value(m) / alpha).collect();
    Belief::from_log_weights(&log_w, source)
}

/// Maximum-entropy prior favoring modes with a low sum of all agents'
/// values at the plan start.
pub fn fair_prior(modes: &[ModeSolution], x0: &DVector<f64>, alpha: f64) -> Result<Belief> {
    value_prior(modes, alpha, BeliefSource::Fair, |mode| {
        (0..mode.solve.values[0].agents.len())
            .map(|i| mode.value_at(i, 0, x0))
            .sum()
    })
}

/// Maximum-entropy prior favoring modes with a low ego value at the plan
/// start.
pub fn ego_prior(
    modes: &[ModeSolution],
    x0: &DVector<f64>,
    alpha: f64,
    ego: usize,
) -> Result<Belief> {
    value_prior(modes, alpha, BeliefSource::Ego, |mode| {
        mode.value_at(ego, 0, x0)
    })
}

/// One observed step of the other agents: the joint state the controls
/// were applied at, and the joint control with the non-ego rows valid.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ObservedStep {
    pub step: usize,
    pub state: DVector<f64>,
    pub controls: DVector<f64>,
}

/// Ring buffer of the last `k` observed non-ego controls with their
/// states.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ObservationBuffer {
    capacity: usize,
    steps: VecDeque<ObservedStep>,
}

impl ObservationBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            steps: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ObservedStep> {
        self.steps.iter()
    }

    pub fn oldest(&self) -> Option<&ObservedStep> {
        self.steps.front()
    }

    /// Appends an observation, evicting the oldest past capacity. Steps
    /// must arrive in increasing order.
    pub fn push(&mut self, step: usize, state: DVector<f64>, controls: DVector<f64>) -> Result<()> {
        if let Some(last) = self.steps.back() {
            if step <= last.step {
                return Err(Error::Config(format!(
                    "observation step {step} is not after {}",
                    last.step
                )));
            }
        }
        self.steps.push_back(ObservedStep {
            step,
            state,
            controls,
        });
        while self.steps.len() > self.capacity {
            self.steps.pop_front();
        }
        Ok(())
    }

    pub fn clear(&mut self) {
        self.steps.clear();
    }
}

/// Per-factor floor on the log likelihood before normalization.
const LOG_LIKELIHOOD_FLOOR: f64 = -700.0;

/// Bayesian posterior over the latent mode from buffered non-ego controls.
///
/// Buffer entry `r` is evaluated against each mode's policies at plan step
/// `r`; the caller aligns the replanning window so this indexing holds.
/// Likelihoods accumulate in log space with a floor per factor; if every
/// mode underflows entirely the prior is returned unchanged.
pub fn mode_posterior(
    prior: &Belief,
    modes: &[ModeSolution],
    buffer: &ObservationBuffer,
    ego: usize,
) -> Result<Belief> {
    mode_posterior_offset(prior, modes, buffer, ego, 0)
}

/// [`mode_posterior`] against plans whose step 0 predates the buffer:
/// buffer entry `r` maps to plan step `r + plan_offset`.
pub fn mode_posterior_offset(
    prior: &Belief,
    modes: &[ModeSolution],
    buffer: &ObservationBuffer,
    ego: usize,
    plan_offset: usize,
) -> Result<Belief> {
    if prior.len() != modes.len() {
        return Err(Error::Config(format!(
            "prior over {} modes but {} modes given",
            prior.len(),
            modes.len()
        )));
    }
    if buffer.is_empty() {
        return Belief::new(prior.probabilities().to_vec(), prior.source());
    }
    let num_agents = modes[0].solve.policy.partition.num_agents();
    let mut log_post: Vec<f64> = prior
        .probabilities()
        .iter()
        .map(|p| if *p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
        .collect();
    let mut any_evidence = false;
    for (a, mode) in modes.iter().enumerate() {
        if prior.prob(a) == 0.0 {
            continue;
        }
        let policy = &mode.solve.policy;
        for (r, obs) in buffer.iter().enumerate() {
            let plan_step = r + plan_offset;
            if plan_step >= policy.len() {
                break;
            }
            for agent in (0..num_agents).filter(|&j| j != ego) {
                let u_agent = policy.partition.slice(&obs.controls, agent);
                let ll = policy
                    .log_density_agent(agent, plan_step, &obs.state, &u_agent)?
                    .max(LOG_LIKELIHOOD_FLOOR);
                if ll > LOG_LIKELIHOOD_FLOOR {
                    any_evidence = true;
                }
                log_post[a] += ll;
            }
        }
    }
    if !any_evidence {
        log_info!("all mode likelihoods underflowed; keeping the prior");
        return Belief::new(prior.probabilities().to_vec(), prior.source());
    }
    Belief::from_log_weights(&log_post, BeliefSource::Posterior)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn belief_normalization_is_enforced() {
        assert!(Belief::new(vec![0.5, 0.4], BeliefSource::Fair).is_err());
        assert!(Belief::new(vec![0.5, -0.5, 1.0], BeliefSource::Fair).is_err());
        let b = Belief::new(vec![0.25, 0.75], BeliefSource::Ego).unwrap();
        assert_eq!(b.prob(1), 0.75);
    }

    #[test]
    fn log_weight_softmax_is_shift_invariant() {
        let a = Belief::from_log_weights(&[0.0, 1.0, -2.0], BeliefSource::Fair).unwrap();
        let b = Belief::from_log_weights(&[100.0, 101.0, 98.0], BeliefSource::Fair).unwrap();
        for k in 0..3 {
            assert!((a.prob(k) - b.prob(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn buffer_evicts_oldest() {
        let mut buf = ObservationBuffer::new(5);
        for step in 0..6 {
            buf.push(step, DVector::zeros(2), DVector::zeros(2)).unwrap();
        }
        assert_eq!(buf.len(), 5);
        assert_eq!(buf.oldest().unwrap().step, 1);
    }

    #[test]
    fn buffer_rejects_out_of_order_steps() {
        let mut buf = ObservationBuffer::new(3);
        buf.push(4, DVector::zeros(1), DVector::zeros(1)).unwrap();
        assert!(buf.push(4, DVector::zeros(1), DVector::zeros(1)).is_err());
        assert!(buf.push(3, DVector::zeros(1), DVector::zeros(1)).is_err());
    }
}
