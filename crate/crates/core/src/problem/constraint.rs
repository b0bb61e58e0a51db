//! Per-agent stage inequality constraints `h_j(x_t, u_t) <= 0`.

use nalgebra::DVector;
use std::sync::Arc;

/// One scalar stage constraint with analytic gradients.
pub trait Constraint: Send + Sync {
    fn label(&self) -> &str;
    fn value(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64;
    /// `(h_x, h_u)` evaluated at `(x, u)`.
    fn gradient(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>);
}

/// An agent's stage constraints. May be empty; counts may differ per agent.
#[derive(Clone, Default)]
pub struct ConstraintSet {
    items: Vec<Arc<dyn Constraint>>,
}

impl ConstraintSet {
    pub fn empty() -> Self {
        Self { items: Vec::new() }
    }

    pub fn new(items: Vec<Arc<dyn Constraint>>) -> Self {
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<dyn Constraint>> {
        self.items.iter()
    }

    pub fn get(&self, j: usize) -> &Arc<dyn Constraint> {
        &self.items[j]
    }

    /// Values of every constraint at one stage point.
    pub fn values(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.items.len(), self.items.iter().map(|c| c.value(t, x, u)))
    }
}

type ValueFn = Box<dyn Fn(usize, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
type GradientFn =
    Box<dyn Fn(usize, &DVector<f64>, &DVector<f64>) -> (DVector<f64>, DVector<f64>) + Send + Sync>;

/// Closure-backed constraint for hand-built problems.
pub struct FnConstraint {
    label: String,
    value: ValueFn,
    gradient: GradientFn,
}

impl FnConstraint {
    pub fn new(label: impl Into<String>, value: ValueFn, gradient: GradientFn) -> Self {
        Self {
            label: label.into(),
            value,
            gradient,
        }
    }
}

impl Constraint for FnConstraint {
    fn label(&self) -> &str {
        &self.label
    }

    fn value(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (self.value)(t, x, u)
    }

    fn gradient(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (self.gradient)(t, x, u)
    }
}

/// Affine constraint `c' x + d' u - b <= 0`; covers corridor bounds and
/// speed limits.
pub struct AffineConstraint {
    label: String,
    c: DVector<f64>,
    d: DVector<f64>,
    b: f64,
}

impl AffineConstraint {
    pub fn new(label: impl Into<String>, c: DVector<f64>, d: DVector<f64>, b: f64) -> Self {
        Self {
            label: label.into(),
            c,
            d,
            b,
        }
    }

    /// `x[index] - bound <= 0`.
    pub fn state_upper(label: impl Into<String>, n_x: usize, n_u: usize, index: usize, bound: f64) -> Self {
        let mut c = DVector::zeros(n_x);
        c[index] = 1.0;
        Self::new(label, c, DVector::zeros(n_u), bound)
    }

    /// `-x[index] - bound <= 0`, i.e. `x[index] >= -bound`.
    pub fn state_lower(label: impl Into<String>, n_x: usize, n_u: usize, index: usize, bound: f64) -> Self {
        let mut c = DVector::zeros(n_x);
        c[index] = -1.0;
        Self::new(label, c, DVector::zeros(n_u), bound)
    }
}

impl Constraint for AffineConstraint {
    fn label(&self) -> &str {
        &self.label
    }

    fn value(&self, _t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.c.dot(x) + self.d.dot(u) - self.b
    }

    fn gradient(&self, _t: usize, _x: &DVector<f64>, _u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (self.c.clone(), self.d.clone())
    }
}

/// Separation constraint owned by the trailing vehicle:
///
/// `h = sigma((s_other - s_own + bias) / width) * (r_sum - distance) <= 0`
///
/// where `sigma` is the logistic function. The logistic factor hands the
/// burden to whichever agent is behind in progress, and the bias shifts
/// each agent's handover point: a positive bias keeps the agent burdened
/// until it is clearly ahead, a negative one frees it until it is clearly
/// behind. Opposite biases on the two agents give the ownership switch a
/// hysteresis band while every evaluation stays a smooth, stateless
/// function of the state.
pub struct SmoothedCollisionConstraint {
    label: String,
    /// Joint-state offsets of the two agents' `(x, y)` position blocks,
    /// own first.
    own_pos: usize,
    other_pos: usize,
    /// Progress coordinates (x position on the straight corridor).
    own_progress: usize,
    other_progress: usize,
    radius_sum: f64,
    /// Logistic width of the ownership switch, in progress units.
    switch_width: f64,
    /// Shift of the ownership midpoint, in progress units.
    ownership_bias: f64,
    n_x: usize,
    n_u: usize,
}

impl SmoothedCollisionConstraint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        label: impl Into<String>,
        own_pos: usize,
        other_pos: usize,
        own_progress: usize,
        other_progress: usize,
        radius_sum: f64,
        switch_width: f64,
        ownership_bias: f64,
        n_x: usize,
        n_u: usize,
    ) -> Self {
        Self {
            label: label.into(),
            own_pos,
            other_pos,
            own_progress,
            other_progress,
            radius_sum,
            switch_width,
            ownership_bias,
            n_x,
            n_u,
        }
    }

    fn logistic(z: f64) -> f64 {
        if z >= 0.0 {
            1.0 / (1.0 + (-z).exp())
        } else {
            let e = z.exp();
            e / (1.0 + e)
        }
    }

    fn parts(&self, x: &DVector<f64>) -> (f64, f64, f64, [f64; 2]) {
        let z = (x[self.other_progress] - x[self.own_progress] + self.ownership_bias)
            / self.switch_width;
        let sigma = Self::logistic(z);
        let delta = [
            x[self.own_pos] - x[self.other_pos],
            x[self.own_pos + 1] - x[self.other_pos + 1],
        ];
        let dist = (delta[0] * delta[0] + delta[1] * delta[1]).sqrt().max(1e-9);
        (z, sigma, dist, delta)
    }
}

impl Constraint for SmoothedCollisionConstraint {
    fn label(&self) -> &str {
        &self.label
    }

    fn value(&self, _t: usize, x: &DVector<f64>, _u: &DVector<f64>) -> f64 {
        let (_, sigma, dist, _) = self.parts(x);
        sigma * (self.radius_sum - dist)
    }

    fn gradient(&self, _t: usize, x: &DVector<f64>, _u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (_, sigma, dist, delta) = self.parts(x);
        let gap = self.radius_sum - dist;
        let dsigma = sigma * (1.0 - sigma) / self.switch_width;
        let mut hx = DVector::zeros(self.n_x);
        // Ownership factor through the progress difference.
        hx[self.other_progress] += dsigma * gap;
        hx[self.own_progress] -= dsigma * gap;
        // Distance through the position blocks.
        for k in 0..2 {
            let dd = delta[k] / dist;
            hx[self.own_pos + k] -= sigma * dd;
            hx[self.other_pos + k] += sigma * dd;
        }
        (hx, DVector::zeros(self.n_u))
    }
}
