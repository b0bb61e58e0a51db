//! Dynamics models: joint discrete-time step functions with analytic
//! Jacobians.

use nalgebra::{DMatrix, DVector};

/// Discrete-time joint dynamics `x_{t+1} = f(x_t, u_t)`.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// `(f_x, f_u)` evaluated at `(x, u)`.
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>);
}

/// Affine dynamics `x' = A x + B u + c`.
pub struct LinearDynamics {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DVector<f64>,
}

impl LinearDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DVector<f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        assert_eq!(a.nrows(), b.nrows());
        assert_eq!(a.nrows(), c.len());
        Self { a, b, c }
    }
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.c
    }

    fn jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.a.clone(), self.b.clone())
    }
}

/// `n` independent unicycles sharing one joint state, explicit Euler.
///
/// Per agent the state block is `(x, y, heading, speed, turn rate)` and the
/// control block is `(linear acceleration, angular acceleration)`:
///
/// ```text
/// x'     = x + dt v cos(theta)      v'     = v + dt a
/// y'     = y + dt v sin(theta)      omega' = omega + dt alpha
/// theta' = theta + dt omega
/// ```
pub struct MultiUnicycle {
    agents: usize,
    dt: f64,
}

impl MultiUnicycle {
    pub const STATE: usize = 5;
    pub const CONTROL: usize = 2;

    pub fn new(agents: usize, dt: f64) -> Self {
        Self { agents, dt }
    }

    /// Offset of agent `i`'s state block in the joint state.
    pub fn state_block(i: usize) -> usize {
        i * Self::STATE
    }
}

impl Dynamics for MultiUnicycle {
    fn state_dim(&self) -> usize {
        self.agents * Self::STATE
    }

    fn control_dim(&self) -> usize {
        self.agents * Self::CONTROL
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let dt = self.dt;
        let mut next = x.clone();
        for i in 0..self.agents {
            let s = Self::state_block(i);
            let c = i * Self::CONTROL;
            let (theta, v, omega) = (x[s + 2], x[s + 3], x[s + 4]);
            next[s] += dt * v * theta.cos();
            next[s + 1] += dt * v * theta.sin();
            next[s + 2] += dt * omega;
            next[s + 3] += dt * u[c];
            next[s + 4] += dt * u[c + 1];
        }
        next
    }

    fn jacobians(&self, x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let dt = self.dt;
        let n = self.state_dim();
        let mut fx = DMatrix::identity(n, n);
        let mut fu = DMatrix::zeros(n, self.control_dim());
        for i in 0..self.agents {
            let s = Self::state_block(i);
            let c = i * Self::CONTROL;
            let (theta, v) = (x[s + 2], x[s + 3]);
            fx[(s, s + 2)] = -dt * v * theta.sin();
            fx[(s, s + 3)] = dt * theta.cos();
            fx[(s + 1, s + 2)] = dt * v * theta.cos();
            fx[(s + 1, s + 3)] = dt * theta.sin();
            fx[(s + 2, s + 4)] = dt;
            fu[(s + 3, c)] = dt;
            fu[(s + 4, c + 1)] = dt;
        }
        (fx, fu)
    }
}

/// Independent triple-integrator chains, one per axis, with jerk controls.
///
/// Each axis holds `(position, velocity, acceleration)` driven by
/// `p += dt v; v += dt a; a += dt j` under explicit Euler.
pub struct TripleIntegrator {
    axes: usize,
    dt: f64,
}

impl TripleIntegrator {
    pub fn new(axes: usize, dt: f64) -> Self {
        Self { axes, dt }
    }
}

impl Dynamics for TripleIntegrator {
    fn state_dim(&self) -> usize {
        3 * self.axes
    }

    fn control_dim(&self) -> usize {
        self.axes
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let dt = self.dt;
        let mut next = x.clone();
        for k in 0..self.axes {
            let b = 3 * k;
            next[b] += dt * x[b + 1];
            next[b + 1] += dt * x[b + 2];
            next[b + 2] += dt * u[k];
        }
        next
    }

    fn jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.state_dim();
        let mut fx = DMatrix::identity(n, n);
        let mut fu = DMatrix::zeros(n, self.axes);
        for k in 0..self.axes {
            let b = 3 * k;
            fx[(b, b + 1)] = self.dt;
            fx[(b + 1, b + 2)] = self.dt;
            fu[(b + 2, k)] = self.dt;
        }
        (fx, fu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unicycle_jacobians_match_finite_differences() {
        let dyn_ = MultiUnicycle::new(2, 0.1);
        let x = DVector::from_vec(vec![
            0.3, -0.2, 0.7, 1.1, 0.2, -0.5, 0.4, -1.2, 0.8, -0.1,
        ]);
        let u = DVector::from_vec(vec![0.5, -0.3, 0.2, 0.9]);
        let (fx, fu) = dyn_.jacobians(&x, &u);
        let eps = 1e-6;
        for j in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += eps;
            xm[j] -= eps;
            let col = (dyn_.step(&xp, &u) - dyn_.step(&xm, &u)) / (2.0 * eps);
            assert!((col - fx.column(j)).amax() < 1e-8);
        }
        for j in 0..u.len() {
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += eps;
            um[j] -= eps;
            let col = (dyn_.step(&x, &up) - dyn_.step(&x, &um)) / (2.0 * eps);
            assert!((col - fu.column(j)).amax() < 1e-8);
        }
    }
}
