//! Shared helpers for integration tests: an independent iLQR oracle and
//! small utilities.

use maxent_games::problem::{GameProblem, Trajectory};
use nalgebra::{DMatrix, DVector};

/// Plain single-agent iLQR, written directly against the dynamics and cost
/// callbacks as an oracle: backward Riccati recursion, forward rollout with
/// cost-based backtracking. Independent of the game solver's stacked-system
/// path.
pub fn ilqr_oracle(
    problem: &GameProblem,
    x0: &DVector<f64>,
    init: &[DVector<f64>],
    max_iterations: usize,
    tolerance: f64,
) -> OracleSolution {
    let horizon = problem.horizon();
    let dynamics = problem.dynamics();
    let cost = problem.cost(0);

    let rollout = |controls: &[DVector<f64>]| -> Vec<DVector<f64>> {
        let mut states = Vec::with_capacity(horizon + 1);
        states.push(x0.clone());
        for u in controls {
            let next = dynamics.step(states.last().unwrap(), u);
            states.push(next);
        }
        states
    };
    let total = |states: &[DVector<f64>], controls: &[DVector<f64>]| -> f64 {
        let mut j = cost.terminal(&states[horizon]);
        for t in 0..horizon {
            j += cost.stage(t, &states[t], &controls[t]);
        }
        j
    };

    let mut controls: Vec<DVector<f64>> = init.to_vec();
    let mut states = rollout(&controls);
    let mut best = total(&states, &controls);
    let mut gains: Vec<(DVector<f64>, DMatrix<f64>)> = Vec::new();
    let mut values: Vec<(DVector<f64>, DMatrix<f64>)> = Vec::new();

    for _ in 0..max_iterations {
        // Backward pass.
        let term = cost.terminal_derivatives(&states[horizon]);
        let mut vx = term.phi_x.clone();
        let mut vxx = term.phi_xx.clone();
        values = vec![(vx.clone(), vxx.clone())];
        gains.clear();
        let mut grad: f64 = 0.0;
        for t in (0..horizon).rev() {
            let d = cost.stage_derivatives(t, &states[t], &controls[t]);
            let (fx, fu) = dynamics.jacobians(&states[t], &controls[t]);
            let qx = &d.lx + fx.transpose() * &vx;
            let qu = &d.lu + fu.transpose() * &vx;
            let qxx = &d.lxx + fx.transpose() * &vxx * &fx;
            let qux = &d.lux + fu.transpose() * &vxx * &fx;
            let quu = &d.luu + fu.transpose() * &vxx * &fu;
            grad = grad.max(qu.amax());
            let inv = quu.clone().try_inverse().expect("oracle Quu invertible");
            let k = -&inv * &qu;
            let gain = -&inv * &qux;
            vx = &qx + gain.transpose() * (&quu * &k) + gain.transpose() * &qu
                + qux.transpose() * &k;
            vxx = &qxx + gain.transpose() * &quu * &gain + gain.transpose() * &qux
                + qux.transpose() * &gain;
            vxx = (&vxx + vxx.transpose()) * 0.5;
            gains.push((k, gain));
            values.push((vx.clone(), vxx.clone()));
        }
        gains.reverse();
        values.reverse();
        if grad <= tolerance {
            break;
        }

        // Forward pass with cost-based backtracking.
        let mut eta = 1.0;
        let mut improved = false;
        for _ in 0..12 {
            let mut cand_controls = Vec::with_capacity(horizon);
            let mut x = x0.clone();
            let mut cand_states = vec![x.clone()];
            for t in 0..horizon {
                let dx = &x - &states[t];
                let (k, gain) = &gains[t];
                let u = &controls[t] + eta * k + gain * dx;
                x = dynamics.step(&x, &u);
                cand_controls.push(u);
                cand_states.push(x.clone());
            }
            let c = total(&cand_states, &cand_controls);
            if c < best {
                best = c;
                controls = cand_controls;
                states = cand_states;
                improved = true;
                break;
            }
            eta *= 0.5;
        }
        if !improved {
            break;
        }
    }

    OracleSolution {
        trajectory: Trajectory {
            states,
            controls,
        },
        cost: best,
        gains,
        values,
    }
}

pub struct OracleSolution {
    pub trajectory: Trajectory,
    pub cost: f64,
    /// `(k, K)` per timestep from the final backward pass.
    pub gains: Vec<(DVector<f64>, DMatrix<f64>)>,
    /// `(V_x, V_xx)` per timestep (terminal first element at t = 0 after
    /// reversal).
    pub values: Vec<(DVector<f64>, DMatrix<f64>)>,
}
