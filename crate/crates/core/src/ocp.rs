//! Finite-horizon tracking problem in multiple-shooting form.
//!
//! Decision variables are the controls `u_0..u_{N-1}` and the shooting-node
//! states `x_1..x_N`; `x_0` is the measured state. Nodes are linked by the
//! continuity residuals `x_{k+1} - euler(x_k, u_k)`.
//!
//! The objective is
//!
//! ```text
//! sum_{k<N} |x_k - xr_k|^2_Q + |u_k - ur_k|^2_R + |u_k - u_{k-1}|^2_Rd
//!   + |x_N - xr_N|^2_Qf + sum_{k<=N} sum_i U_i(pos(x_k))
//! ```
//!
//! with diagonal weights and `u_{-1}` the last input applied to the plant.

use crate::error::{invalid, Error, Result};
use crate::model::{dynamics_jacobians, euler_unchecked, ControlVec, ModelParams, StateVec, NU, NX, X};
use crate::obstacle::{
    hard_penalty, hard_penalty_gradient, hard_penalty_hessian_psd, potential, potential_gradient,
    potential_hessian_psd, ObstacleField,
};
use crate::path::ReferencePoint;
use crate::scalar::{c, Real};

/// Multiplier on `eta` for the exterior penalty used in hard-constraint mode.
pub const HARD_PENALTY_SCALE: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights<T> {
    pub q: [T; NX],
    pub r: [T; NU],
    pub r_delta: [T; NU],
    pub q_f: [T; NX],
}

impl<T: Real> Default for Weights<T> {
    fn default() -> Self {
        let q = [10.0, 10.0, 10.0, 2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 1.0].map(c);
        Self {
            q,
            r: [0.2, 0.5, 0.5, 0.1].map(c),
            r_delta: [0.05, 0.1, 0.1, 0.05].map(c),
            q_f: q.map(|v| v * c(2.0)),
        }
    }
}

impl<T: Real> Weights<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: &[T]| v.iter().all(|w| w.is_finite() && *w >= T::zero());
        if !ok(&self.q) {
            return Err(invalid("q", "weights must be finite and >= 0"));
        }
        if !ok(&self.r) {
            return Err(invalid("r", "weights must be finite and >= 0"));
        }
        if !ok(&self.r_delta) {
            return Err(invalid("r_delta", "weights must be finite and >= 0"));
        }
        if !ok(&self.q_f) {
            return Err(invalid("q_f", "weights must be finite and >= 0"));
        }
        Ok(())
    }

    /// Every weight multiplied by `s`.
    pub fn scaled(&self, s: T) -> Self {
        Self {
            q: self.q.map(|v| v * s),
            r: self.r.map(|v| v * s),
            r_delta: self.r_delta.map(|v| v * s),
            q_f: self.q_f.map(|v| v * s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObstacleMode {
    /// Repulsive potential added to the objective.
    #[default]
    Penalty,
    /// Clearance enforced through a stiff exterior penalty on negative margins.
    HardConstraint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcpConfig<T> {
    pub horizon: usize,
    pub dt: T,
    pub u_min: ControlVec<T>,
    pub u_max: ControlVec<T>,
    pub obstacle_mode: ObstacleMode,
}

impl<T: Real> Default for OcpConfig<T> {
    fn default() -> Self {
        Self {
            horizon: 30,
            dt: c(0.05),
            u_min: ControlVec([5.0, -0.35, -0.35, -1.0].map(c)),
            u_max: ControlVec([60.0, 0.35, 0.35, 1.0].map(c)),
            obstacle_mode: ObstacleMode::Penalty,
        }
    }
}

impl<T: Real> OcpConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(invalid("horizon", "must be >= 1"));
        }
        if !(self.dt.is_finite() && self.dt > T::zero()) {
            return Err(invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.u_min.is_finite() && self.u_max.is_finite()) {
            return Err(invalid("u_min", "input bounds must be finite"));
        }
        if (0..NU).any(|i| self.u_min[i] > self.u_max[i]) {
            return Err(invalid("u_min", "must be <= u_max componentwise"));
        }
        Ok(())
    }
}

/// Shooting-node states `x_1..x_N` and controls `u_0..u_{N-1}`.
///
/// Also used to hold gradients with respect to those variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision<T> {
    pub states: Vec<StateVec<T>>,
    pub controls: Vec<ControlVec<T>>,
}

impl<T: Real> Decision<T> {
    pub fn zeros(horizon: usize) -> Self {
        Self {
            states: vec![StateVec::zeros(); horizon],
            controls: vec![ControlVec::zeros(); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn num_variables(&self) -> usize {
        self.horizon() * (NX + NU)
    }

    /// Flat view ordered `u_0, x_1, u_1, x_2, ..., u_{N-1}, x_N`.
    pub fn to_flat(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.num_variables());
        for (u, x) in self.controls.iter().zip(&self.states) {
            v.extend_from_slice(&u.0);
            v.extend_from_slice(&x.0);
        }
        v
    }

    pub fn from_flat(horizon: usize, v: &[T]) -> Result<Self> {
        if v.len() != horizon * (NX + NU) {
            return Err(Error::SizeMismatch {
                what: "flat decision vector",
                expected: horizon * (NX + NU),
                got: v.len(),
            });
        }
        let mut d = Self::zeros(horizon);
        for (k, chunk) in v.chunks_exact(NX + NU).enumerate() {
            d.controls[k] = ControlVec::from_fn(|i| chunk[i]);
            d.states[k] = StateVec::from_fn(|i| chunk[NU + i]);
        }
        Ok(d)
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().all(StateVec::is_finite) && self.controls.iter().all(ControlVec::is_finite)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpProblem<T> {
    /// Measured state, fixed.
    pub x0: StateVec<T>,
    /// Last applied input; anchors the first input increment.
    pub u_prev: ControlVec<T>,
    /// References for nodes `0..=N`.
    pub refs: Vec<ReferencePoint<T>>,
    pub weights: Weights<T>,
    pub config: OcpConfig<T>,
    pub field: ObstacleField<T>,
    pub params: ModelParams<T>,
}

impl<T: Real> OcpProblem<T> {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.weights.validate()?;
        self.field.validate()?;
        self.params.validate()?;
        if self.refs.len() < self.config.horizon + 1 {
            return Err(Error::SizeMismatch {
                what: "reference window",
                expected: self.config.horizon + 1,
                got: self.refs.len(),
            });
        }
        if !self.x0.is_finite() || !self.u_prev.is_finite() {
            return Err(invalid("x0", "initial state and previous input must be finite"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub(crate) fn check_decision(&self, d: &Decision<T>) -> Result<()> {
        let n = self.horizon();
        if d.states.len() != n || d.controls.len() != n {
            return Err(Error::SizeMismatch {
                what: "decision horizon",
                expected: n,
                got: if d.states.len() != n {
                    d.states.len()
                } else {
                    d.controls.len()
                },
            });
        }
        if self.refs.len() < n + 1 {
            return Err(Error::SizeMismatch {
                what: "reference window",
                expected: n + 1,
                got: self.refs.len(),
            });
        }
        Ok(())
    }

    /// State at node `k` (`x0` for `k = 0`).
    #[inline]
    pub fn node_state<'a>(&'a self, d: &'a Decision<T>, k: usize) -> &'a StateVec<T> {
        if k == 0 {
            &self.x0
        } else {
            &d.states[k - 1]
        }
    }

    /// Input preceding `u_k` in the increment penalty.
    #[inline]
    pub fn previous_control<'a>(&'a self, d: &'a Decision<T>, k: usize) -> &'a ControlVec<T> {
        if k == 0 {
            &self.u_prev
        } else {
            &d.controls[k - 1]
        }
    }

    fn hard_weight(&self) -> T {
        c::<T>(HARD_PENALTY_SCALE) * self.field.eta
    }

    /// Obstacle term at one position.
    pub fn obstacle_cost(&self, pos: &[T; 3]) -> T {
        let eta = self.field.eta;
        match self.config.obstacle_mode {
            ObstacleMode::Penalty => self.field.obstacles.iter().map(|o| potential(pos, o, eta)).sum(),
            ObstacleMode::HardConstraint => {
                let w = self.hard_weight();
                self.field.obstacles.iter().map(|o| hard_penalty(pos, o, w)).sum()
            }
        }
    }

    pub fn obstacle_gradient(&self, pos: &[T; 3]) -> [T; 3] {
        let mut g = [T::zero(); 3];
        let eta = self.field.eta;
        let w = self.hard_weight();
        for o in &self.field.obstacles {
            let gi = match self.config.obstacle_mode {
                ObstacleMode::Penalty => potential_gradient(pos, o, eta),
                ObstacleMode::HardConstraint => hard_penalty_gradient(pos, o, w),
            };
            for i in 0..3 {
                g[i] += gi[i];
            }
        }
        g
    }

    /// Positive semidefinite curvature of the obstacle term.
    pub fn obstacle_hessian(&self, pos: &[T; 3]) -> [[T; 3]; 3] {
        let mut h = [[T::zero(); 3]; 3];
        let eta = self.field.eta;
        let w = self.hard_weight();
        for o in &self.field.obstacles {
            let hi = match self.config.obstacle_mode {
                ObstacleMode::Penalty => potential_hessian_psd(pos, o, eta),
                ObstacleMode::HardConstraint => hard_penalty_hessian_psd(pos, o, w),
            };
            for i in 0..3 {
                for j in 0..3 {
                    h[i][j] += hi[i][j];
                }
            }
        }
        h
    }
}

fn weighted_sq<T: Real>(a: &[T], b: &[T], w: &[T]) -> T {
    a.iter()
        .zip(b)
        .zip(w)
        .map(|((a, b), w)| *w * (*a - *b) * (*a - *b))
        .sum()
}

pub fn stage_cost<T: Real>(
    x: &StateVec<T>,
    u: &ControlVec<T>,
    u_prev: &ControlVec<T>,
    x_ref: &StateVec<T>,
    u_ref: &ControlVec<T>,
    w: &Weights<T>,
) -> T {
    weighted_sq(&x.0, &x_ref.0, &w.q) + weighted_sq(&u.0, &u_ref.0, &w.r) + weighted_sq(&u.0, &u_prev.0, &w.r_delta)
}

pub fn terminal_cost<T: Real>(x: &StateVec<T>, x_ref: &StateVec<T>, w: &Weights<T>) -> T {
    weighted_sq(&x.0, &x_ref.0, &w.q_f)
}

pub fn total_objective<T: Real>(d: &Decision<T>, prob: &OcpProblem<T>) -> Result<T> {
    prob.check_decision(d)?;
    Ok(objective_unchecked(d, prob))
}

pub(crate) fn objective_unchecked<T: Real>(d: &Decision<T>, prob: &OcpProblem<T>) -> T {
    let n = prob.horizon();
    let w = &prob.weights;
    let mut j = T::zero();
    for k in 0..n {
        let r = &prob.refs[k];
        j += stage_cost(
            prob.node_state(d, k),
            &d.controls[k],
            prob.previous_control(d, k),
            &r.state,
            &r.input,
            w,
        );
    }
    j += terminal_cost(&d.states[n - 1], &prob.refs[n].state, w);
    if !prob.field.is_empty() {
        for k in 0..=n {
            j += prob.obstacle_cost(&prob.node_state(d, k).position());
        }
    }
    j
}

pub fn continuity_residuals<T: Real>(d: &Decision<T>, prob: &OcpProblem<T>) -> Result<Vec<StateVec<T>>> {
    prob.check_decision(d)?;
    Ok(residuals_unchecked(d, prob))
}

pub(crate) fn residuals_unchecked<T: Real>(d: &Decision<T>, prob: &OcpProblem<T>) -> Vec<StateVec<T>> {
    let dt = prob.config.dt;
    (0..prob.horizon())
        .map(|k| {
            let next = euler_unchecked(prob.node_state(d, k), &d.controls[k], &prob.params, dt);
            d.states[k].sub(&next)
        })
        .collect()
}

pub type StateJacobian<T> = [[T; NX]; NX];
pub type InputJacobian<T> = [[T; NU]; NX];

/// Jacobians `(A, B)` of the Euler step `x + f(x, u) dt`.
pub fn linearize_step<T: Real>(
    x: &StateVec<T>,
    u: &ControlVec<T>,
    params: &ModelParams<T>,
    dt: T,
) -> (StateJacobian<T>, InputJacobian<T>) {
    let (mut a, mut b) = dynamics_jacobians(x, u, params);
    for (i, row) in a.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v *= dt;
        }
        row[i] += T::one();
    }
    for row in b.iter_mut() {
        for v in row.iter_mut() {
            *v *= dt;
        }
    }
    (a, b)
}

/// Gradient of [`total_objective`], shaped like the decision.
pub fn objective_gradient<T: Real>(d: &Decision<T>, prob: &OcpProblem<T>) -> Result<Decision<T>> {
    prob.check_decision(d)?;
    Ok(gradient_unchecked(d, prob))
}

pub(crate) fn gradient_unchecked<T: Real>(d: &Decision<T>, prob: &OcpProblem<T>) -> Decision<T> {
    let n = prob.horizon();
    let w = &prob.weights;
    let two = c::<T>(2.0);
    let mut g = Decision::zeros(n);
    for k in 0..n {
        let r = &prob.refs[k];
        let u = &d.controls[k];
        let du = u.sub(prob.previous_control(d, k));
        for i in 0..NU {
            let inc = two * w.r_delta[i] * du[i];
            g.controls[k][i] += two * w.r[i] * (u[i] - r.input[i]) + inc;
            if k > 0 {
                g.controls[k - 1][i] -= inc;
            }
        }
        if k > 0 {
            let x = &d.states[k - 1];
            for i in 0..NX {
                g.states[k - 1][i] += two * w.q[i] * (x[i] - r.state[i]);
            }
        }
    }
    let xn = &d.states[n - 1];
    let rn = &prob.refs[n].state;
    for i in 0..NX {
        g.states[n - 1][i] += two * w.q_f[i] * (xn[i] - rn[i]);
    }
    if !prob.field.is_empty() {
        for k in 1..=n {
            let go = prob.obstacle_gradient(&d.states[k - 1].position());
            for (i, v) in go.iter().enumerate() {
                g.states[k - 1][X + i] += *v;
            }
        }
    }
    g
}
