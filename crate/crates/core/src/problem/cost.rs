//! Per-agent cost models over the joint state and joint control.

use nalgebra::{DMatrix, DVector};

/// First and second derivatives of a stage cost at one point.
#[derive(Debug, Clone)]
pub struct StageDerivatives {
    pub lx: DVector<f64>,
    pub lu: DVector<f64>,
    pub lxx: DMatrix<f64>,
    /// Cross block, control rows by state columns.
    pub lux: DMatrix<f64>,
    pub luu: DMatrix<f64>,
}

impl StageDerivatives {
    pub fn zeros(n_x: usize, n_u: usize) -> Self {
        Self {
            lx: DVector::zeros(n_x),
            lu: DVector::zeros(n_u),
            lxx: DMatrix::zeros(n_x, n_x),
            lux: DMatrix::zeros(n_u, n_x),
            luu: DMatrix::zeros(n_u, n_u),
        }
    }

    pub fn add(&mut self, other: &StageDerivatives) {
        self.lx += &other.lx;
        self.lu += &other.lu;
        self.lxx += &other.lxx;
        self.lux += &other.lux;
        self.luu += &other.luu;
    }
}

/// Derivatives of a terminal cost at one point.
#[derive(Debug, Clone)]
pub struct TerminalDerivatives {
    pub phi_x: DVector<f64>,
    pub phi_xx: DMatrix<f64>,
}

impl TerminalDerivatives {
    pub fn zeros(n_x: usize) -> Self {
        Self {
            phi_x: DVector::zeros(n_x),
            phi_xx: DMatrix::zeros(n_x, n_x),
        }
    }
}

/// One agent's running and terminal cost.
pub trait Cost: Send + Sync {
    fn stage(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64;
    fn stage_derivatives(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> StageDerivatives;
    fn terminal(&self, x: &DVector<f64>) -> f64;
    fn terminal_derivatives(&self, x: &DVector<f64>) -> TerminalDerivatives;
}

/// Quadratic tracking cost
/// `l = 1/2 (x - x_ref)' Q (x - x_ref) + 1/2 u' R u`,
/// `phi = 1/2 (x - x_ref) ' Qf (x - x_ref)`.
///
/// `R` is over the joint control, so games with coupled control costs are
/// expressible directly.
pub struct QuadraticCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub x_ref: DVector<f64>,
}

impl QuadraticCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, qf: DMatrix<f64>, x_ref: DVector<f64>) -> Self {
        assert_eq!(q.nrows(), x_ref.len());
        assert_eq!(qf.nrows(), x_ref.len());
        Self { q, r, qf, x_ref }
    }

    /// Control-effort-only cost with zero state terms.
    pub fn pure_control(n_x: usize, r: DMatrix<f64>) -> Self {
        Self {
            q: DMatrix::zeros(n_x, n_x),
            qf: DMatrix::zeros(n_x, n_x),
            x_ref: DVector::zeros(n_x),
            r,
        }
    }
}

impl Cost for QuadraticCost {
    fn stage(&self, _t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let dx = x - &self.x_ref;
        0.5 * (dx.dot(&(&self.q * &dx)) + u.dot(&(&self.r * u)))
    }

    fn stage_derivatives(&self, _t: usize, x: &DVector<f64>, u: &DVector<f64>) -> StageDerivatives {
        let dx = x - &self.x_ref;
        StageDerivatives {
            lx: &self.q * dx,
            lu: &self.r * u,
            lxx: self.q.clone(),
            lux: DMatrix::zeros(self.r.nrows(), self.q.nrows()),
            luu: self.r.clone(),
        }
    }

    fn terminal(&self, x: &DVector<f64>) -> f64 {
        let dx = x - &self.x_ref;
        0.5 * dx.dot(&(&self.qf * &dx))
    }

    fn terminal_derivatives(&self, x: &DVector<f64>) -> TerminalDerivatives {
        let dx = x - &self.x_ref;
        TerminalDerivatives {
            phi_x: &self.qf * dx,
            phi_xx: self.qf.clone(),
        }
    }
}

/// Inverse-quadratic collision penalty `w / (d^2 + eps)` summed over the
/// registered position pairs, applied to the running cost only.
///
/// The same pair term appears in both paired agents' costs, so the penalty
/// is symmetric across an agent pair.
pub struct SoftCollisionCost {
    /// Pairs of `(own, other)` joint-state offsets of `(x, y)` blocks.
    pairs: Vec<(usize, usize)>,
    weight: f64,
    eps: f64,
    n_x: usize,
    n_u: usize,
}

impl SoftCollisionCost {
    pub fn new(pairs: Vec<(usize, usize)>, weight: f64, eps: f64, n_x: usize, n_u: usize) -> Self {
        assert!(eps > 0.0);
        Self {
            pairs,
            weight,
            eps,
            n_x,
            n_u,
        }
    }
}

impl Cost for SoftCollisionCost {
    fn stage(&self, _t: usize, x: &DVector<f64>, _u: &DVector<f64>) -> f64 {
        let mut total = 0.0;
        for &(a, b) in &self.pairs {
            let dx = x[a] - x[b];
            let dy = x[a + 1] - x[b + 1];
            total += self.weight / (dx * dx + dy * dy + self.eps);
        }
        total
    }

    fn stage_derivatives(&self, _t: usize, x: &DVector<f64>, _u: &DVector<f64>) -> StageDerivatives {
        let mut d = StageDerivatives::zeros(self.n_x, self.n_u);
        for &(a, b) in &self.pairs {
            let delta = [x[a] - x[b], x[a + 1] - x[b + 1]];
            let s = delta[0] * delta[0] + delta[1] * delta[1] + self.eps;
            let g = -2.0 * self.weight / (s * s);
            // Gradient blocks: +g*delta on own coordinates, -g*delta on the
            // other agent's.
            for k in 0..2 {
                d.lx[a + k] += g * delta[k];
                d.lx[b + k] -= g * delta[k];
            }
            // Hessian in delta: (8w/s^3) delta delta' - (2w/s^2) I, mapped to
            // the four coordinate blocks with signs (+,-;-,+).
            let c1 = 8.0 * self.weight / (s * s * s);
            let c2 = 2.0 * self.weight / (s * s);
            for r in 0..2 {
                for c in 0..2 {
                    let h = c1 * delta[r] * delta[c] - if r == c { c2 } else { 0.0 };
                    d.lxx[(a + r, a + c)] += h;
                    d.lxx[(b + r, b + c)] += h;
                    d.lxx[(a + r, b + c)] -= h;
                    d.lxx[(b + r, a + c)] -= h;
                }
            }
        }
        d
    }

    fn terminal(&self, _x: &DVector<f64>) -> f64 {
        0.0
    }

    fn terminal_derivatives(&self, _x: &DVector<f64>) -> TerminalDerivatives {
        TerminalDerivatives::zeros(self.n_x)
    }
}

/// Racing objective for one vehicle: quadratic effort on its own controls
/// each step, and the progress difference `other - own` at the final state.
pub struct RacingCost {
    /// Offset of this agent's control block in the joint control.
    control_offset: usize,
    r_own: DMatrix<f64>,
    /// Joint-state indices of own and opponent progress coordinates.
    own_progress: usize,
    other_progress: usize,
    progress_weight: f64,
    n_x: usize,
    n_u: usize,
}

impl RacingCost {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        control_offset: usize,
        r_own: DMatrix<f64>,
        own_progress: usize,
        other_progress: usize,
        progress_weight: f64,
        n_x: usize,
        n_u: usize,
    ) -> Self {
        Self {
            control_offset,
            r_own,
            own_progress,
            other_progress,
            progress_weight,
            n_x,
            n_u,
        }
    }
}

impl Cost for RacingCost {
    fn stage(&self, _t: usize, _x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let own = u.rows(self.control_offset, self.r_own.nrows());
        0.5 * own.dot(&(&self.r_own * own))
    }

    fn stage_derivatives(&self, _t: usize, _x: &DVector<f64>, u: &DVector<f64>) -> StageDerivatives {
        let m = self.r_own.nrows();
        let own = u.rows(self.control_offset, m);
        let mut d = StageDerivatives::zeros(self.n_x, self.n_u);
        let grad = &self.r_own * own;
        for k in 0..m {
            d.lu[self.control_offset + k] = grad[k];
            for j in 0..m {
                d.luu[(self.control_offset + k, self.control_offset + j)] = self.r_own[(k, j)];
            }
        }
        d
    }

    fn terminal(&self, x: &DVector<f64>) -> f64 {
        self.progress_weight * (x[self.other_progress] - x[self.own_progress])
    }

    fn terminal_derivatives(&self, x: &DVector<f64>) -> TerminalDerivatives {
        let _ = x;
        let mut d = TerminalDerivatives::zeros(self.n_x);
        d.phi_x[self.other_progress] = self.progress_weight;
        d.phi_x[self.own_progress] = -self.progress_weight;
        d
    }
}

/// Sum of component costs; used to compose scenario objectives.
pub struct SumCost {
    parts: Vec<std::sync::Arc<dyn Cost>>,
    n_x: usize,
    n_u: usize,
}

impl SumCost {
    pub fn new(parts: Vec<std::sync::Arc<dyn Cost>>, n_x: usize, n_u: usize) -> Self {
        Self { parts, n_x, n_u }
    }
}

impl Cost for SumCost {
    fn stage(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.parts.iter().map(|p| p.stage(t, x, u)).sum()
    }

    fn stage_derivatives(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> StageDerivatives {
        let mut acc = StageDerivatives::zeros(self.n_x, self.n_u);
        for p in &self.parts {
            acc.add(&p.stage_derivatives(t, x, u));
        }
        acc
    }

    fn terminal(&self, x: &DVector<f64>) -> f64 {
        self.parts.iter().map(|p| p.terminal(x)).sum()
    }

    fn terminal_derivatives(&self, x: &DVector<f64>) -> TerminalDerivatives {
        let mut acc = TerminalDerivatives::zeros(self.n_x);
        for p in &self.parts {
            let d = p.terminal_derivatives(x);
            acc.phi_x += &d.phi_x;
            acc.phi_xx += &d.phi_xx;
        }
        acc
    }
}

type StageFn = Box<dyn Fn(usize, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
type StageDerivFn =
    Box<dyn Fn(usize, &DVector<f64>, &DVector<f64>) -> StageDerivatives + Send + Sync>;
type TerminalFn = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type TerminalDerivFn = Box<dyn Fn(&DVector<f64>) -> TerminalDerivatives + Send + Sync>;

/// Closure-backed cost, mainly for small hand-built test problems.
pub struct FnCost {
    pub stage: StageFn,
    pub stage_derivatives: StageDerivFn,
    pub terminal: TerminalFn,
    pub terminal_derivatives: TerminalDerivFn,
}

impl Cost for FnCost {
    fn stage(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (self.stage)(t, x, u)
    }

    fn stage_derivatives(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> StageDerivatives {
        (self.stage_derivatives)(t, x, u)
    }

    fn terminal(&self, x: &DVector<f64>) -> f64 {
        (self.terminal)(x)
    }

    fn terminal_derivatives(&self, x: &DVector<f64>) -> TerminalDerivatives {
        (self.terminal_derivatives)(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collision_cost_is_symmetric_in_the_pair() {
        let n_x = 10;
        let cost_a = SoftCollisionCost::new(vec![(0, 5)], 2.0, 1e-3, n_x, 4);
        let cost_b = SoftCollisionCost::new(vec![(5, 0)], 2.0, 1e-3, n_x, 4);
        let mut x = DVector::zeros(n_x);
        x[0] = 0.4;
        x[1] = -0.2;
        x[5] = -0.1;
        x[6] = 0.3;
        let u = DVector::zeros(4);
        assert!((cost_a.stage(0, &x, &u) - cost_b.stage(0, &x, &u)).abs() < 1e-15);
    }

    #[test]
    fn collision_cost_vanishes_far_apart() {
        let cost = SoftCollisionCost::new(vec![(0, 5)], 1.0, 1e-3, 10, 4);
        let mut x = DVector::zeros(10);
        x[0] = 1e4;
        let u = DVector::zeros(4);
        assert!(cost.stage(0, &x, &u) < 1e-7);
    }

    #[test]
    fn racing_terminal_is_progress_difference() {
        let cost = RacingCost::new(0, DMatrix::identity(2, 2), 0, 5, 1.0, 10, 4);
        let mut x = DVector::zeros(10);
        x[0] = 3.0; // own progress
        x[5] = 5.0; // opponent progress
        assert!((cost.terminal(&x) - 2.0).abs() < 1e-15);
    }
}
