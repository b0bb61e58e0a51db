//! Backward sweep: Q-expansions, the stacked feedback system, policy
//! covariances and the entropy-aware value recursion.

use nalgebra::{Cholesky, DMatrix, DVector};
use std::sync::Arc;

use super::types::{
    AgentQ, AgentValue, GaussianPolicy, PolicyStep, QExpansion, SolverConfig, ValueExpansion,
};
use crate::problem::{symmetrize, ControlPartition, Cost, GameProblem, StageDerivatives, Trajectory};
use crate::{Error, Result};

/// Builds every agent's quadratic state-action model at one timestep from
/// the next timestep's value models, the stage cost derivatives and the
/// dynamics Jacobians. Second-order dynamics terms are dropped.
pub fn q_expand(
    next: &ValueExpansion,
    stage_costs: &[f64],
    cost_derivs: &[StageDerivatives],
    fx: &DMatrix<f64>,
    fu: &DMatrix<f64>,
) -> Result<QExpansion> {
    let fx_t = fx.transpose();
    let fu_t = fu.transpose();
    let mut agents = Vec::with_capacity(next.agents.len());
    for ((val, d), &l) in next.agents.iter().zip(cost_derivs).zip(stage_costs) {
        let vxx_fx = &val.vxx * fx;
        let vxx_fu = &val.vxx * fu;
        let q = AgentQ {
            cost_constant: l + val.value,
            entropy_carry: val.entropy,
            qx: &d.lx + &fx_t * &val.vx,
            qu: &d.lu + &fu_t * &val.vx,
            qxx: &d.lxx + &fx_t * &vxx_fx,
            qux: &d.lux + &fu_t * &vxx_fx,
            quu: &d.luu + &fu_t * &vxx_fu,
        };
        let finite = q.cost_constant.is_finite()
            && q.qx.iter().all(|v| v.is_finite())
            && q.qu.iter().all(|v| v.is_finite())
            && q.qxx.iter().all(|v| v.is_finite())
            && q.qux.iter().all(|v| v.is_finite())
            && q.quu.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Solver("non-finite Q expansion".into()));
        }
        agents.push(q);
    }
    Ok(QExpansion { agents })
}

/// The coupled linear system for the joint feedback: each agent
/// contributes the rows of its own control block.
#[derive(Debug, Clone)]
pub struct StackedSystem {
    pub quu_hat: DMatrix<f64>,
    pub qu: DVector<f64>,
    pub qux: DMatrix<f64>,
}

/// Stacks each agent's own-control rows of `(Q_uu, Q_u, Q_ux)` into the
/// joint system.
pub fn stack_quu(q: &QExpansion, partition: &ControlPartition) -> StackedSystem {
    let n_u = partition.total_dim();
    let n_x = q.agents[0].qux.ncols();
    let mut quu_hat = DMatrix::zeros(n_u, n_u);
    let mut qu = DVector::zeros(n_u);
    let mut qux = DMatrix::zeros(n_u, n_x);
    for (i, agent) in q.agents.iter().enumerate() {
        for row in partition.block(i) {
            for c in 0..n_u {
                quu_hat[(row, c)] = agent.quu[(row, c)];
            }
            for c in 0..n_x {
                qux[(row, c)] = agent.qux[(row, c)];
            }
            qu[row] = agent.qu[row];
        }
    }
    StackedSystem { quu_hat, qu, qux }
}

/// Solves the stacked system for the feedforward and feedback gains:
/// `quu_hat k = -qu`, `quu_hat K = -qux`, with one step of iterative
/// refinement.
pub fn solve_feedback(sys: &StackedSystem) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let lu = sys.quu_hat.clone().lu();
    let mut k = lu
        .solve(&(-&sys.qu))
        .ok_or_else(|| Error::Solver("singular stacked control system".into()))?;
    let mut gain = lu
        .solve(&(-&sys.qux))
        .ok_or_else(|| Error::Solver("singular stacked control system".into()))?;
    // One refinement pass knocks the residual down to machine precision.
    let r_k = &sys.quu_hat * &k + &sys.qu;
    if let Some(dk) = lu.solve(&r_k) {
        k -= dk;
    }
    let r_gain = &sys.quu_hat * &gain + &sys.qux;
    if let Some(dg) = lu.solve(&r_gain) {
        gain -= dg;
    }
    if k.iter().any(|v| !v.is_finite()) || gain.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("non-finite feedback solution".into()));
    }
    Ok((k, gain))
}

/// Control covariance of one agent, `alpha` times the inverse of its own
/// positive-definite block. Zero temperature collapses to the mean.
pub fn policy_covariance(own_block: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    let n = own_block.nrows();
    if alpha == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let chol = Cholesky::new(own_block.clone())
        .ok_or_else(|| Error::Solver("own control block is not positive definite".into()))?;
    let mut sigma = chol.inverse() * alpha;
    symmetrize(&mut sigma);
    Ok(sigma)
}

/// Log determinant via Cholesky; fails on non-PD input.
fn log_det_pd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(m.clone())
        .ok_or_else(|| Error::Solver("matrix is not positive definite".into()))?;
    Ok(chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0)
}

/// Applies the value recursion at one timestep given gains that solve the
/// stacked system.
///
/// The state-dependent part follows the deterministic game update; the
/// state-independent entropy offset adds, per agent,
///
/// ```text
/// (alpha/2) (log|Q^i_ii| - n_i log(2 pi alpha))
///   + (alpha/2) sum_{j != i} tr[(Q^j_jj)^{-1} Q^i_jj]
/// ```
///
/// where `Q^i_jj` is agent `i`'s Hessian block over agent `j`'s controls.
/// The cross-agent trace carries the factor one half because it is the
/// expectation of a quadratic form under the other agents' policy
/// covariances.
pub fn value_update(
    q: &QExpansion,
    k: &DVector<f64>,
    gain: &DMatrix<f64>,
    alpha: f64,
    partition: &ControlPartition,
) -> Result<ValueExpansion> {
    let n_agents = q.agents.len();
    // Cholesky factors of every agent's own block, shared by the entropy
    // terms.
    let mut own_chol = Vec::with_capacity(n_agents);
    if alpha > 0.0 {
        for (j, agent) in q.agents.iter().enumerate() {
            let block = agent.diag_block(partition, j);
            own_chol.push(Cholesky::new(block).ok_or_else(|| {
                Error::Solver(format!("agent {j} own block lost positive definiteness"))
            })?);
        }
    }

    let mut agents = Vec::with_capacity(n_agents);
    for (i, aq) in q.agents.iter().enumerate() {
        let quu_k = &aq.quu * k;
        let value = aq.cost_constant + aq.qu.dot(k) + 0.5 * k.dot(&quu_k);
        let gain_t = gain.transpose();
        let vx = &aq.qx + &gain_t * (&quu_k + &aq.qu) + aq.qux.transpose() * k;
        let mut vxx = &aq.qxx + &gain_t * &aq.quu * gain + &gain_t * &aq.qux
            + aq.qux.transpose() * gain;
        symmetrize(&mut vxx);

        let mut entropy = aq.entropy_carry;
        if alpha > 0.0 {
            let n_i = partition.agent_dim(i) as f64;
            let log_det = log_det_pd(&aq.diag_block(partition, i))?;
            if !log_det.is_finite() {
                return Err(Error::Solver(format!(
                    "non-finite log determinant for agent {i}"
                )));
            }
            let mut vh = 0.5 * alpha
                * (log_det - n_i * (2.0 * std::f64::consts::PI * alpha).ln());
            for j in 0..n_agents {
                if j == i {
                    continue;
                }
                let cross = aq.diag_block(partition, j);
                let solved = own_chol[j].solve(&cross);
                vh += 0.5 * alpha * solved.trace();
            }
            entropy += vh;
        }

        agents.push(AgentValue {
            value,
            entropy,
            vx,
            vxx,
        });
    }
    Ok(ValueExpansion { agents })
}

/// Result of one backward sweep over the horizon.
pub struct BackwardPassResult {
    pub policy: GaussianPolicy,
    /// Value models at `t = 0 .. T`, terminal included.
    pub values: Vec<ValueExpansion>,
    /// Q models at `t = 0 .. T-1`.
    pub q_expansions: Vec<QExpansion>,
    /// `max_{t,i} || own rows of Q^i_u ||_inf` at the nominal trajectory,
    /// the solver's stationarity residual.
    pub stationarity: f64,
    /// Euclidean norm of the stacked own-row gradients over the whole
    /// horizon; smoother than the max norm, used as the line-search merit.
    pub stationarity_l2: f64,
    /// Regularization actually applied to the own-control blocks.
    pub regularization: f64,
}

/// Clamps negative eigenvalues of a symmetric matrix to zero.
fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (idx, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > 0.0 {
            let v = eig.eigenvectors.column(idx);
            out.ger(lam, &v, &v, 1.0);
        }
    }
    out
}

/// Terminal value models from the Taylor expansion of each terminal cost.
pub fn terminal_expansion(costs: &[Arc<dyn Cost>], x_terminal: &DVector<f64>) -> ValueExpansion {
    ValueExpansion {
        agents: costs
            .iter()
            .map(|c| {
                let d = c.terminal_derivatives(x_terminal);
                AgentValue {
                    value: c.terminal(x_terminal),
                    entropy: 0.0,
                    vx: d.phi_x,
                    vxx: d.phi_xx,
                }
            })
            .collect(),
    }
}

/// Backward sweep at exactly the given regularization; fails instead of
/// ramping when a block is indefinite or the stacked solve is singular.
pub(crate) fn backward_pass_exact(
    problem: &GameProblem,
    costs: &[Arc<dyn Cost>],
    traj: &Trajectory,
    config: &SolverConfig,
    mu: f64,
) -> Result<BackwardPassResult> {
    let horizon = problem.horizon();
    let partition = problem.partition().clone();
    let mut values = vec![terminal_expansion(costs, &traj.states[horizon])];
    let mut q_expansions: Vec<QExpansion> = Vec::with_capacity(horizon);
    let mut steps: Vec<PolicyStep> = Vec::with_capacity(horizon);
    let mut stationarity: f64 = 0.0;
    let mut stationarity_sq: f64 = 0.0;

    for t in (0..horizon).rev() {
        let x = &traj.states[t];
        let u = &traj.controls[t];
        let (fx, fu) = problem.dynamics().jacobians(x, u);
        let stage_costs: Vec<f64> = costs.iter().map(|c| c.stage(t, x, u)).collect();
        let mut derivs: Vec<StageDerivatives> =
            costs.iter().map(|c| c.stage_derivatives(t, x, u)).collect();
        if config.convexify_state_hessians {
            for d in derivs.iter_mut() {
                if d.lxx.iter().any(|v| *v < 0.0) {
                    d.lxx = project_psd(&d.lxx);
                }
            }
        }
        let mut q = q_expand(values.last().unwrap(), &stage_costs, &derivs, &fx, &fu)
            .map_err(|e| Error::Solver(format!("{e} at timestep {t}")))?;

        for (i, agent) in q.agents.iter().enumerate() {
            for r in partition.block(i) {
                stationarity = stationarity.max(agent.qu[r].abs());
                stationarity_sq += agent.qu[r] * agent.qu[r];
            }
        }

        if mu > 0.0 {
            for (i, agent) in q.agents.iter_mut().enumerate() {
                for r in partition.block(i) {
                    agent.quu[(r, r)] += mu;
                }
            }
        }

        // Own-control blocks must be positive definite. An indefinite
        // block gets a deterministic local eigenvalue shift, so the
        // recursion stays a fixed function of the trajectory.
        for (i, agent) in q.agents.iter_mut().enumerate() {
            let block = agent.own_block(&partition, i);
            if Cholesky::new(block.clone()).is_none() {
                let eigs = block.symmetric_eigen().eigenvalues;
                let min_eig = eigs.iter().fold(f64::INFINITY, |a, &b| a.min(b));
                let max_abs = eigs.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
                // Keep the repaired block well conditioned so the gains do
                // not swing with tiny changes elsewhere.
                let shift = -min_eig + (1e-2 * max_abs).max(1e-6);
                for r in partition.block(i) {
                    agent.quu[(r, r)] += shift;
                }
            }
        }

        let sys = stack_quu(&q, &partition);
        let (k, gain) = solve_feedback(&sys)
            .map_err(|e| Error::Solver(format!("{e} at timestep {t}")))?;

        let covariances = (0..partition.num_agents())
            .map(|i| {
                policy_covariance(&q.agents[i].own_block(&partition, i), config.alpha)
                    .map_err(|e| Error::Solver(format!("{e} (agent {i}, timestep {t})")))
            })
            .collect::<Result<Vec<_>>>()?;

        let value = value_update(&q, &k, &gain, config.alpha, &partition)
            .map_err(|e| Error::Solver(format!("{e} at timestep {t}")))?;

        steps.push(PolicyStep {
            nominal_state: x.clone(),
            nominal_control: u.clone(),
            feedforward: k,
            feedback: gain,
            covariances,
        });
        q_expansions.push(q);
        values.push(value);
    }

    steps.reverse();
    q_expansions.reverse();
    values.reverse();
    Ok(BackwardPassResult {
        policy: GaussianPolicy {
            steps,
            partition,
            alpha: config.alpha,
        },
        values,
        q_expansions,
        stationarity,
        stationarity_l2: stationarity_sq.sqrt(),
        regularization: mu,
    })
}

/// Runs the backward sweep from the terminal Taylor expansion down to the
/// first timestep, ramping regularization on the own-control blocks when
/// positive definiteness or the stacked solve fails.
pub fn backward_pass(
    problem: &GameProblem,
    costs: &[Arc<dyn Cost>],
    traj: &Trajectory,
    config: &SolverConfig,
    mu: f64,
) -> Result<BackwardPassResult> {
    let mut mu = mu;
    loop {
        match backward_pass_exact(problem, costs, traj, config, mu) {
            Ok(result) => return Ok(result),
            Err(err) => {
                let next = if mu == 0.0 {
                    config.regularization_floor
                } else {
                    mu * 2.0
                };
                if next > config.regularization_max {
                    return Err(Error::Solver(format!(
                        "backward pass failed at maximum regularization: {err}"
                    )));
                }
                mu = next;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ControlPartition;

    fn scalar_value(v: f64, vx: f64, vxx: f64) -> ValueExpansion {
        ValueExpansion {
            agents: vec![AgentValue {
                value: v,
                entropy: 0.0,
                vx: DVector::from_vec(vec![vx]),
                vxx: DMatrix::from_vec(1, 1, vec![vxx]),
            }],
        }
    }

    #[test]
    fn q_expand_scalar_arithmetic() {
        // n_x = n_u = 1, l_uu = 2, f_u = 3, V'_xx = 4 gives Q_uu = 38.
        let next = scalar_value(0.0, 0.0, 4.0);
        let mut d = StageDerivatives::zeros(1, 1);
        d.luu[(0, 0)] = 2.0;
        let fx = DMatrix::from_vec(1, 1, vec![1.0]);
        let fu = DMatrix::from_vec(1, 1, vec![3.0]);
        let q = q_expand(&next, &[0.0], &[d], &fx, &fu).unwrap();
        assert!((q.agents[0].quu[(0, 0)] - 38.0).abs() < 1e-15);
    }

    #[test]
    fn q_expand_zero_value_reduces_to_cost() {
        let next = scalar_value(0.0, 0.0, 0.0);
        let mut d = StageDerivatives::zeros(1, 1);
        d.lx[0] = 0.7;
        d.lu[0] = -0.3;
        d.lxx[(0, 0)] = 2.0;
        d.lux[(0, 0)] = 0.5;
        d.luu[(0, 0)] = 1.5;
        let fx = DMatrix::from_vec(1, 1, vec![0.9]);
        let fu = DMatrix::from_vec(1, 1, vec![0.2]);
        let q = q_expand(&next, &[1.0], &[d.clone()], &fx, &fu).unwrap();
        assert_eq!(q.agents[0].qx[0], d.lx[0]);
        assert_eq!(q.agents[0].qu[0], d.lu[0]);
        assert_eq!(q.agents[0].qxx[(0, 0)], d.lxx[(0, 0)]);
        assert_eq!(q.agents[0].qux[(0, 0)], d.lux[(0, 0)]);
        assert_eq!(q.agents[0].quu[(0, 0)], d.luu[(0, 0)]);
    }

    #[test]
    fn stacking_single_agent_is_identity() {
        let partition = ControlPartition::new(vec![2]).unwrap();
        let quu = DMatrix::from_vec(2, 2, vec![2.0, 0.3, 0.3, 1.5]);
        let q = QExpansion {
            agents: vec![AgentQ {
                cost_constant: 0.0,
                entropy_carry: 0.0,
                qx: DVector::zeros(1),
                qu: DVector::from_vec(vec![0.1, -0.2]),
                qxx: DMatrix::zeros(1, 1),
                qux: DMatrix::zeros(2, 1),
                quu: quu.clone(),
            }],
        };
        let sys = stack_quu(&q, &partition);
        assert_eq!(sys.quu_hat, quu);
        assert_eq!(sys.qu, q.agents[0].qu);
    }

    #[test]
    fn stacking_takes_own_rows() {
        // Two agents with scalar controls; own-row slices [2, 1] and [0, 3]
        // stack into [[2, 1], [0, 3]].
        let partition = ControlPartition::new(vec![1, 1]).unwrap();
        let mk = |rows: [[f64; 2]; 2], qu: [f64; 2]| AgentQ {
            cost_constant: 0.0,
            entropy_carry: 0.0,
            qx: DVector::zeros(1),
            qu: DVector::from_vec(qu.to_vec()),
            qxx: DMatrix::zeros(1, 1),
            qux: DMatrix::zeros(2, 1),
            quu: DMatrix::from_row_slice(2, 2, &[rows[0][0], rows[0][1], rows[1][0], rows[1][1]]),
        };
        let q = QExpansion {
            agents: vec![
                mk([[2.0, 1.0], [9.0, 9.0]], [4.0, 9.0]),
                mk([[9.0, 9.0], [0.0, 3.0]], [9.0, 3.0]),
            ],
        };
        let sys = stack_quu(&q, &partition);
        assert_eq!(
            sys.quu_hat,
            DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0])
        );
        assert_eq!(sys.qu, DVector::from_vec(vec![4.0, 3.0]));
    }

    #[test]
    fn decoupled_game_stacks_block_diagonal() {
        let partition = ControlPartition::new(vec![1, 1]).unwrap();
        let mk = |own: f64, qu: f64, slot: usize| {
            let mut quu = DMatrix::zeros(2, 2);
            quu[(slot, slot)] = own;
            let mut quv = DVector::zeros(2);
            quv[slot] = qu;
            AgentQ {
                cost_constant: 0.0,
                entropy_carry: 0.0,
                qx: DVector::zeros(1),
                qu: quv,
                qxx: DMatrix::zeros(1, 1),
                qux: DMatrix::zeros(2, 1),
                quu,
            }
        };
        let q = QExpansion {
            agents: vec![mk(2.0, 1.0, 0), mk(5.0, -1.0, 1)],
        };
        let sys = stack_quu(&q, &partition);
        assert_eq!(sys.quu_hat[(0, 1)], 0.0);
        assert_eq!(sys.quu_hat[(1, 0)], 0.0);
    }

    #[test]
    fn feedback_solve_scalar() {
        let sys = StackedSystem {
            quu_hat: DMatrix::from_vec(1, 1, vec![2.0]),
            qu: DVector::from_vec(vec![4.0]),
            qux: DMatrix::from_vec(1, 1, vec![6.0]),
        };
        let (k, gain) = solve_feedback(&sys).unwrap();
        assert!((k[0] + 2.0).abs() < 1e-14);
        assert!((gain[(0, 0)] + 3.0).abs() < 1e-14);
    }

    #[test]
    fn feedback_solve_two_by_two_back_substitution() {
        // Upper-triangular system solved by hand: k = (-1.5, -1).
        let sys = StackedSystem {
            quu_hat: DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]),
            qu: DVector::from_vec(vec![4.0, 3.0]),
            qux: DMatrix::zeros(2, 3),
        };
        let (k, gain) = solve_feedback(&sys).unwrap();
        assert!((k[0] + 1.5).abs() < 1e-14);
        assert!((k[1] + 1.0).abs() < 1e-14);
        assert_eq!(gain.amax(), 0.0);
    }

    #[test]
    fn feedback_residual_on_random_pd_instances() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        for _ in 0..50 {
            let n = rng.random_range(2..6);
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            // Diagonally dominant blocks keep the system comfortably regular.
            let quu_hat = &a * a.transpose() + DMatrix::identity(n, n) * (n as f64);
            let qu = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let qux = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
            let sys = StackedSystem { quu_hat, qu, qux };
            let (k, gain) = solve_feedback(&sys).unwrap();
            let rk = (&sys.quu_hat * k + &sys.qu).amax();
            let rg = (&sys.quu_hat * gain + &sys.qux).amax();
            assert!(rk < 1e-10, "residual {rk}");
            assert!(rg < 1e-10, "residual {rg}");
        }
    }

    #[test]
    fn covariance_examples() {
        let q = DMatrix::from_vec(1, 1, vec![2.0]);
        let sigma = policy_covariance(&q, 0.5).unwrap();
        assert!((sigma[(0, 0)] - 0.25).abs() < 1e-15);

        let q = DMatrix::from_partial_diagonal(2, 2, &[1.0, 4.0]);
        let sigma = policy_covariance(&q, 2.0).unwrap();
        assert!((sigma[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((sigma[(1, 1)] - 0.5).abs() < 1e-14);

        // Zero temperature collapses to the mean.
        let sigma = policy_covariance(&q, 0.0).unwrap();
        assert_eq!(sigma.amax(), 0.0);
    }

    #[test]
    fn covariance_rejects_indefinite_blocks() {
        let q = DMatrix::from_vec(1, 1, vec![-1.0]);
        assert!(policy_covariance(&q, 0.5).is_err());
    }

    #[test]
    fn entropy_offset_single_agent_identity() {
        // N = 1, n_u = 2, alpha = 1, Q_uu = I: V_H = -log(2 pi).
        let partition = ControlPartition::new(vec![2]).unwrap();
        let q = QExpansion {
            agents: vec![AgentQ {
                cost_constant: 0.0,
                entropy_carry: 0.0,
                qx: DVector::zeros(1),
                qu: DVector::zeros(2),
                qxx: DMatrix::zeros(1, 1),
                qux: DMatrix::zeros(2, 1),
                quu: DMatrix::identity(2, 2),
            }],
        };
        let k = DVector::zeros(2);
        let gain = DMatrix::zeros(2, 1);
        let val = value_update(&q, &k, &gain, 1.0, &partition).unwrap();
        let expect = -(2.0 * std::f64::consts::PI).ln();
        assert!((val.agents[0].entropy - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_temperature_reduces_to_deterministic_update() {
        let partition = ControlPartition::new(vec![2]).unwrap();
        let quu = DMatrix::from_vec(2, 2, vec![3.0, 0.4, 0.4, 2.0]);
        let q = QExpansion {
            agents: vec![AgentQ {
                cost_constant: 1.0,
                entropy_carry: 0.0,
                qx: DVector::from_vec(vec![0.5]),
                qu: DVector::from_vec(vec![1.0, -1.0]),
                qxx: DMatrix::from_vec(1, 1, vec![2.0]),
                qux: DMatrix::from_vec(2, 1, vec![0.3, 0.1]),
                quu: quu.clone(),
            }],
        };
        let sys = stack_quu(&q, &partition);
        let (k, gain) = solve_feedback(&sys).unwrap();
        let val = value_update(&q, &k, &gain, 0.0, &partition).unwrap();
        assert_eq!(val.agents[0].entropy, 0.0);
        // Deterministic identities for the single-agent case.
        let expect_v = 1.0 + q.agents[0].qu.dot(&k) + 0.5 * k.dot(&(&quu * &k));
        assert!((val.agents[0].value - expect_v).abs() < 1e-12);
    }

    #[test]
    fn entropy_bookkeeping_matches_gaussian_entropy_single_agent() {
        // For N = 1 the per-step offset equals -alpha H[pi] + alpha n/2.
        let partition = ControlPartition::new(vec![2]).unwrap();
        let alpha = 0.7;
        let quu = DMatrix::from_vec(2, 2, vec![3.0, 0.4, 0.4, 2.0]);
        let q = QExpansion {
            agents: vec![AgentQ {
                cost_constant: 0.0,
                entropy_carry: 0.0,
                qx: DVector::zeros(1),
                qu: DVector::zeros(2),
                qxx: DMatrix::zeros(1, 1),
                qux: DMatrix::zeros(2, 1),
                quu: quu.clone(),
            }],
        };
        let k = DVector::zeros(2);
        let gain = DMatrix::zeros(2, 1);
        let val = value_update(&q, &k, &gain, alpha, &partition).unwrap();
        let sigma = policy_covariance(&quu, alpha).unwrap();
        let h = super::super::types::gaussian_entropy(&sigma).unwrap();
        let expect = -alpha * h + 0.5 * alpha * 2.0;
        assert!((val.agents[0].entropy - expect).abs() < 1e-12);
    }
}
