//! Finite-difference audit of every analytic derivative a problem exposes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::GameProblem;
use crate::{Error, Result};

/// Central finite differences with step `eps`.
#[derive(Debug, Clone, Copy)]
pub struct FiniteDiff {
    pub eps: f64,
}

impl FiniteDiff {
    pub fn new(eps: f64) -> Self {
        Self { eps }
    }

    pub fn gradient<F: Fn(&DVector<f64>) -> f64>(&self, f: F, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        for j in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += self.eps;
            xm[j] -= self.eps;
            g[j] = (f(&xp) - f(&xm)) / (2.0 * self.eps);
        }
        g
    }

    pub fn jacobian<F: Fn(&DVector<f64>) -> DVector<f64>>(
        &self,
        f: F,
        x: &DVector<f64>,
    ) -> DMatrix<f64> {
        let probe = f(x);
        let mut jac = DMatrix::zeros(probe.len(), x.len());
        for j in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += self.eps;
            xm[j] -= self.eps;
            let col = (f(&xp) - f(&xm)) / (2.0 * self.eps);
            jac.set_column(j, &col);
        }
        jac
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0f64.max(a.abs()).max(b.abs())
}

fn max_rel_err_vec(analytic: &DVector<f64>, fd: &DVector<f64>) -> (f64, usize) {
    let mut worst = 0.0;
    let mut at = 0;
    for j in 0..analytic.len() {
        let e = rel_err(analytic[j], fd[j]);
        if e > worst {
            worst = e;
            at = j;
        }
    }
    (worst, at)
}

fn max_rel_err_mat(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> (f64, (usize, usize)) {
    let mut worst = 0.0;
    let mut at = (0, 0);
    for r in 0..analytic.nrows() {
        for c in 0..analytic.ncols() {
            let e = rel_err(analytic[(r, c)], fd[(r, c)]);
            if e > worst {
                worst = e;
                at = (r, c);
            }
        }
    }
    (worst, at)
}

/// Worst relative error observed for one derivative block across all
/// sampled points.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BlockReport {
    pub name: String,
    pub max_rel_error: f64,
    /// `(row, col)` of the worst entry; col is 0 for vector blocks.
    pub worst_entry: (usize, usize),
}

/// Result of a full derivative audit.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DerivativeReport {
    pub blocks: Vec<BlockReport>,
    pub tolerance: f64,
    pub samples: usize,
}

impl DerivativeReport {
    pub fn pass(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BlockReport> {
        self.blocks
            .iter()
            .filter(move |b| b.max_rel_error >= self.tolerance)
    }

    pub fn table(&self) -> String {
        let mut out = String::from("block                            max rel err   status\n");
        for b in &self.blocks {
            let status = if b.max_rel_error < self.tolerance {
                "ok"
            } else {
                "FAIL"
            };
            out.push_str(&format!(
                "{:<32} {:>12.3e}   {} (entry {:?})\n",
                b.name, b.max_rel_error, status, b.worst_entry
            ));
        }
        out
    }
}

struct BlockTracker {
    name: String,
    worst: f64,
    at: (usize, usize),
}

impl BlockTracker {
    fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            worst: 0.0,
            at: (0, 0),
        }
    }

    fn update_vec(&mut self, analytic: &DVector<f64>, fd: &DVector<f64>) -> Result<()> {
        if analytic.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model(format!(
                "non-finite analytic derivative in block {}",
                self.name
            )));
        }
        let (e, j) = max_rel_err_vec(analytic, fd);
        if e > self.worst {
            self.worst = e;
            self.at = (j, 0);
        }
        Ok(())
    }

    fn update_mat(&mut self, analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> Result<()> {
        if analytic.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model(format!(
                "non-finite analytic derivative in block {}",
                self.name
            )));
        }
        let (e, at) = max_rel_err_mat(analytic, fd);
        if e > self.worst {
            self.worst = e;
            self.at = at;
        }
        Ok(())
    }

    fn finish(self) -> BlockReport {
        BlockReport {
            name: self.name,
            max_rel_error: self.worst,
            worst_entry: self.at,
        }
    }
}

/// Compares every analytic derivative of a problem's dynamics, costs and
/// constraints against central finite differences at `samples` random
/// points. Hessians are differenced from the analytic gradients.
pub fn check_derivatives(problem: &GameProblem, samples: usize, eps: f64) -> Result<DerivativeReport> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Config(format!(
            "finite-difference step must be in (0, 1e-2], got {eps}"
        )));
    }
    let fd = FiniteDiff::new(eps);
    let n_x = problem.state_dim();
    let n_u = problem.control_dim();
    let mut rng = ChaCha12Rng::seed_from_u64(0x5EED);

    let mut fx_t = BlockTracker::new("f_x");
    let mut fu_t = BlockTracker::new("f_u");
    let mut cost_trackers: Vec<Vec<BlockTracker>> = (0..problem.num_agents())
        .map(|i| {
            vec![
                BlockTracker::new(format!("agent{i}.l_x")),
                BlockTracker::new(format!("agent{i}.l_u")),
                BlockTracker::new(format!("agent{i}.l_xx")),
                BlockTracker::new(format!("agent{i}.l_ux")),
                BlockTracker::new(format!("agent{i}.l_uu")),
                BlockTracker::new(format!("agent{i}.phi_x")),
                BlockTracker::new(format!("agent{i}.phi_xx")),
            ]
        })
        .collect();
    let mut con_trackers: Vec<Vec<(BlockTracker, BlockTracker)>> = problem
        .constraint_sets()
        .iter()
        .enumerate()
        .map(|(i, set)| {
            set.iter()
                .map(|c| {
                    (
                        BlockTracker::new(format!("agent{i}.{}_x", c.label())),
                        BlockTracker::new(format!("agent{i}.{}_u", c.label())),
                    )
                })
                .collect()
        })
        .collect();

    for _ in 0..samples {
        let x = DVector::from_fn(n_x, |_, _| rng.random_range(-2.0..2.0));
        let u = DVector::from_fn(n_u, |_, _| rng.random_range(-2.0..2.0));
        let t = rng.random_range(0..problem.horizon());

        let (afx, afu) = problem.dynamics().jacobians(&x, &u);
        let fdx = fd.jacobian(|xx| problem.dynamics().step(xx, &u), &x);
        let fdu = fd.jacobian(|uu| problem.dynamics().step(&x, uu), &u);
        fx_t.update_mat(&afx, &fdx)?;
        fu_t.update_mat(&afu, &fdu)?;

        for (i, cost) in problem.costs().iter().enumerate() {
            let d = cost.stage_derivatives(t, &x, &u);
            let tr = &mut cost_trackers[i];
            tr[0].update_vec(&d.lx, &fd.gradient(|xx| cost.stage(t, xx, &u), &x))?;
            tr[1].update_vec(&d.lu, &fd.gradient(|uu| cost.stage(t, &x, uu), &u))?;
            tr[2].update_mat(
                &d.lxx,
                &fd.jacobian(|xx| cost.stage_derivatives(t, xx, &u).lx, &x),
            )?;
            tr[3].update_mat(
                &d.lux,
                &fd.jacobian(|xx| cost.stage_derivatives(t, xx, &u).lu, &x),
            )?;
            tr[4].update_mat(
                &d.luu,
                &fd.jacobian(|uu| cost.stage_derivatives(t, &x, uu).lu, &u),
            )?;
            let td = cost.terminal_derivatives(&x);
            tr[5].update_vec(&td.phi_x, &fd.gradient(|xx| cost.terminal(xx), &x))?;
            tr[6].update_mat(
                &td.phi_xx,
                &fd.jacobian(|xx| cost.terminal_derivatives(xx).phi_x, &x),
            )?;
        }

        for (i, set) in problem.constraint_sets().iter().enumerate() {
            for (j, c) in set.iter().enumerate() {
                let (hx, hu) = c.gradient(t, &x, &u);
                let (hx_t, hu_t) = &mut con_trackers[i][j];
                hx_t.update_vec(&hx, &fd.gradient(|xx| c.value(t, xx, &u), &x))?;
                hu_t.update_vec(&hu, &fd.gradient(|uu| c.value(t, &x, uu), &u))?;
            }
        }
    }

    let mut blocks = vec![fx_t.finish(), fu_t.finish()];
    for trackers in cost_trackers {
        blocks.extend(trackers.into_iter().map(BlockTracker::finish));
    }
    for trackers in con_trackers {
        for (hx, hu) in trackers {
            blocks.push(hx.finish());
            blocks.push(hu.finish());
        }
    }
    Ok(DerivativeReport {
        blocks,
        tolerance: 1e-4,
        samples,
    })
}
