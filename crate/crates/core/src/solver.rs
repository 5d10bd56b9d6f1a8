//! Gauss-Newton SQP for the multiple-shooting problem.
//!
//! Each iteration linearizes the continuity constraints, eliminates the state
//! increments by forward condensing and solves the resulting box-constrained
//! QP in the control increments. Steps are globalized with a backtracking line
//! search on the l1 merit `J + mu * |c|_1`.

use std::time::{Duration, Instant};

use crate::error::{invalid, Error, Result};
use crate::model::{euler_unchecked, ControlVec, StateVec, NU, NX, X};
use crate::ocp::{
    gradient_unchecked, linearize_step, objective_unchecked, residuals_unchecked, Decision, InputJacobian, OcpProblem,
    StateJacobian,
};
use crate::qp::solve_box_qp;
use crate::scalar::{c, Real};

/// Armijo sufficient-decrease constant.
const ARMIJO: f64 = 1e-4;
/// Relative accuracy of the QP subproblem.
const QP_TOLERANCE: f64 = 1e-8;
const QP_MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T> {
    pub max_iterations: usize,
    pub kkt_tolerance: T,
    pub line_search_shrink: T,
    pub line_search_min_step: T,
    pub constraint_tolerance: T,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            kkt_tolerance: c(1e-6),
            line_search_shrink: c(0.5),
            line_search_min_step: c(1e-8),
            constraint_tolerance: c(1e-8),
        }
    }
}

impl<T: Real> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(invalid("max_iterations", "must be >= 1"));
        }
        for (name, v) in [
            ("kkt_tolerance", self.kkt_tolerance),
            ("line_search_min_step", self.line_search_min_step),
            ("constraint_tolerance", self.constraint_tolerance),
        ] {
            if !(v.is_finite() && v > T::zero()) {
                return Err(invalid(name, format!("must be > 0, got {v}")));
            }
        }
        let s = self.line_search_shrink;
        if !(s > T::zero() && s < T::one()) {
            return Err(invalid("line_search_shrink", format!("must lie in (0, 1), got {s}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    LineSearchFailure,
}

/// Merit values around one accepted step, both measured with the same penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord<T> {
    pub merit_before: T,
    pub merit_after: T,
    pub penalty: T,
    pub step_length: T,
    pub kkt_residual: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult<T> {
    pub decision: Decision<T>,
    pub iterations: usize,
    pub kkt_residual: T,
    pub continuity_residual_inf: T,
    pub objective: T,
    pub wall_time: Duration,
    pub status: SolveStatus,
    pub history: Vec<IterationRecord<T>>,
}

impl<T: Real> SolveResult<T> {
    /// The input to apply to the plant.
    pub fn first_control(&self) -> ControlVec<T> {
        self.decision.controls[0]
    }
}

fn rollout<T: Real>(prob: &OcpProblem<T>, controls: Vec<ControlVec<T>>) -> Decision<T> {
    let mut x = prob.x0;
    let states = controls
        .iter()
        .map(|u| {
            x = euler_unchecked(&x, u, &prob.params, prob.config.dt);
            x
        })
        .collect();
    Decision { states, controls }
}

/// Reference inputs (clipped to the bounds) rolled out from `x0`.
pub fn cold_start<T: Real>(prob: &OcpProblem<T>) -> Decision<T> {
    let cfg = &prob.config;
    let controls = (0..cfg.horizon)
        .map(|k| {
            prob.refs[k.min(prob.refs.len() - 1)]
                .input
                .clamp(&cfg.u_min, &cfg.u_max)
        })
        .collect();
    rollout(prob, controls)
}

/// Previous solution shifted by one step (last control repeated), re-rolled
/// from the new `x0`.
pub fn shift_warm_start<T: Real>(prev: &Decision<T>, prob: &OcpProblem<T>) -> Result<Decision<T>> {
    let n = prob.horizon();
    if prev.controls.len() != n || prev.states.len() != n {
        return Err(Error::SizeMismatch {
            what: "warm start horizon",
            expected: n,
            got: prev.controls.len(),
        });
    }
    let mut controls: Vec<_> = prev.controls[1..].to_vec();
    controls.push(prev.controls[n - 1]);
    Ok(rollout(prob, controls))
}

struct Linearization<T> {
    a: Vec<StateJacobian<T>>,
    b: Vec<InputJacobian<T>>,
}

impl<T: Real> Linearization<T> {
    fn at(d: &Decision<T>, prob: &OcpProblem<T>) -> Self {
        let (a, b) = (0..prob.horizon())
            .map(|k| linearize_step(prob.node_state(d, k), &d.controls[k], &prob.params, prob.config.dt))
            .unzip();
        Self { a, b }
    }
}

fn mat_t_vec<T: Real>(a: &StateJacobian<T>, v: &StateVec<T>) -> StateVec<T> {
    StateVec::from_fn(|j| (0..NX).map(|i| a[i][j] * v[i]).sum())
}

fn mat_vec<T: Real>(a: &StateJacobian<T>, v: &StateVec<T>) -> StateVec<T> {
    StateVec::from_fn(|i| (0..NX).map(|j| a[i][j] * v[j]).sum())
}

fn b_vec<T: Real>(b: &InputJacobian<T>, u: &ControlVec<T>) -> StateVec<T> {
    StateVec::from_fn(|i| (0..NU).map(|j| b[i][j] * u[j]).sum())
}

fn b_t_vec<T: Real>(b: &InputJacobian<T>, v: &StateVec<T>) -> ControlVec<T> {
    ControlVec::from_fn(|j| (0..NX).map(|i| b[i][j] * v[i]).sum())
}

/// Multipliers that zero the state part of the Lagrangian gradient, from the
/// state gradients `gx[k]` of nodes `1..=N`.
fn backward_multipliers<T: Real>(lin: &Linearization<T>, gx: &[StateVec<T>]) -> Vec<StateVec<T>> {
    let n = gx.len();
    let mut lambda = vec![StateVec::zeros(); n];
    lambda[n - 1] = gx[n - 1].scale(-T::one());
    for k in (0..n - 1).rev() {
        lambda[k] = mat_t_vec(&lin.a[k + 1], &lambda[k + 1]).sub(&gx[k]);
    }
    lambda
}

/// Continuity multiplier estimates at `d`, one per shooting interval.
pub fn multiplier_estimates<T: Real>(d: &Decision<T>, prob: &OcpProblem<T>) -> Result<Vec<StateVec<T>>> {
    prob.check_decision(d)?;
    let lin = Linearization::at(d, prob);
    let g = gradient_unchecked(d, prob);
    Ok(backward_multipliers(&lin, &g.states))
}

fn stationarity<T: Real>(
    d: &Decision<T>,
    prob: &OcpProblem<T>,
    lin: &Linearization<T>,
    grad: &Decision<T>,
    lambda: &[StateVec<T>],
) -> T {
    let n = prob.horizon();
    let (lo, hi) = (&prob.config.u_min, &prob.config.u_max);
    let mut worst = T::zero();
    for k in 0..n {
        let mut r = grad.states[k].add(&lambda[k]);
        if k + 1 < n {
            r = r.sub(&mat_t_vec(&lin.a[k + 1], &lambda[k + 1]));
        }
        worst = worst.max(r.max_abs());
        let s = grad.controls[k].sub(&b_t_vec(&lin.b[k], &lambda[k]));
        let u = &d.controls[k];
        for i in 0..NU {
            let projected = (u[i] - s[i]).max(lo[i]).min(hi[i]);
            worst = worst.max((u[i] - projected).abs());
        }
    }
    worst
}

/// Projected stationarity of the Lagrangian plus the largest continuity residual.
pub fn kkt_residual<T: Real>(d: &Decision<T>, prob: &OcpProblem<T>, multipliers: &[StateVec<T>]) -> Result<T> {
    prob.check_decision(d)?;
    if multipliers.len() != prob.horizon() {
        return Err(Error::SizeMismatch {
            what: "multipliers",
            expected: prob.horizon(),
            got: multipliers.len(),
        });
    }
    let lin = Linearization::at(d, prob);
    let grad = gradient_unchecked(d, prob);
    let res = residuals_unchecked(d, prob);
    Ok(stationarity(d, prob, &lin, &grad, multipliers) + inf_norm(&res))
}

fn inf_norm<T: Real>(r: &[StateVec<T>]) -> T {
    r.iter().fold(T::zero(), |m, v| m.max(v.max_abs()))
}

fn l1_norm<T: Real>(r: &[StateVec<T>]) -> T {
    r.iter().map(StateVec::sum_abs).sum()
}

/// Gauss-Newton curvature of the node-`k` state terms (`1 <= k <= N`).
fn node_hessian<T: Real>(prob: &OcpProblem<T>, k: usize, x: &StateVec<T>) -> [[T; NX]; NX] {
    let w = if k < prob.horizon() {
        &prob.weights.q
    } else {
        &prob.weights.q_f
    };
    let mut h = [[T::zero(); NX]; NX];
    for i in 0..NX {
        h[i][i] = c::<T>(2.0) * w[i];
    }
    if !prob.field.is_empty() {
        let ho = prob.obstacle_hessian(&x.position());
        for i in 0..3 {
            for j in 0..3 {
                h[X + i][X + j] += ho[i][j];
            }
        }
    }
    h
}

struct Step<T> {
    du: Vec<ControlVec<T>>,
    dx: Vec<StateVec<T>>,
    qp_multipliers: Vec<StateVec<T>>,
}

/// Builds and solves the condensed QP around `d`.
fn qp_step<T: Real>(
    d: &Decision<T>,
    prob: &OcpProblem<T>,
    lin: &Linearization<T>,
    grad: &Decision<T>,
    res: &[StateVec<T>],
    order: &[usize],
) -> Step<T> {
    let n = prob.horizon();
    let nv = n * NU;
    let two = c::<T>(2.0);
    let w = &prob.weights;

    // free response of the state increments when every du is zero
    let mut free: Vec<StateVec<T>> = Vec::with_capacity(n);
    for k in 0..n {
        let e = if k == 0 {
            res[0].scale(-T::one())
        } else {
            mat_vec(&lin.a[k], &free[k - 1]).sub(&res[k])
        };
        free.push(e);
    }
    let weights: Vec<[[T; NX]; NX]> = (0..n).map(|k| node_hessian(prob, k + 1, &d.states[k])).collect();

    let mut h = vec![T::zero(); nv * nv];
    let mut q = vec![T::zero(); nv];
    let idx = |k: usize, i: usize| k * NU + i;

    // input and input-increment terms: block tridiagonal
    for k in 0..n {
        for i in 0..NU {
            let mut diag = two * (w.r[i] + w.r_delta[i]);
            if k + 1 < n {
                diag += two * w.r_delta[i];
                let off = -two * w.r_delta[i];
                h[idx(k, i) * nv + idx(k + 1, i)] = off;
                h[idx(k + 1, i) * nv + idx(k, i)] = off;
            }
            h[idx(k, i) * nv + idx(k, i)] = diag;
            q[idx(k, i)] = grad.controls[k][i];
        }
    }

    // backward sweep: accumulated state curvature P_k and linear term v_k
    let mut p_acc = vec![[[T::zero(); NX]; NX]; n];
    let mut v_acc = vec![StateVec::zeros(); n];
    for k in (0..n).rev() {
        let wk = &weights[k];
        let lin_term = grad.states[k].add(&StateVec::from_fn(|i| (0..NX).map(|j| wk[i][j] * free[k][j]).sum()));
        let (mut pk, mut vk) = (*wk, lin_term);
        if k + 1 < n {
            let a = &lin.a[k + 1];
            let next = &p_acc[k + 1];
            let mut pa = [[T::zero(); NX]; NX];
            for i in 0..NX {
                for j in 0..NX {
                    pa[i][j] = (0..NX).map(|l| next[i][l] * a[l][j]).sum();
                }
            }
            for i in 0..NX {
                for j in 0..NX {
                    pk[i][j] += (0..NX).map(|l| a[l][i] * pa[l][j]).sum();
                }
            }
            vk = vk.add(&mat_t_vec(a, &v_acc[k + 1]));
        }
        p_acc[k] = pk;
        v_acc[k] = vk;
    }

    for i in 0..n {
        let gq = b_t_vec(&lin.b[i], &v_acc[i]);
        for ii in 0..NU {
            q[idx(i, ii)] += gq[ii];
        }
        // m = B_i' P_i A_i ... A_{j+1}, walked back from j = i
        let b = &lin.b[i];
        let pi = &p_acc[i];
        let mut m = [[T::zero(); NX]; NU];
        for ii in 0..NU {
            for l in 0..NX {
                m[ii][l] = (0..NX).map(|r| b[r][ii] * pi[r][l]).sum();
            }
        }
        for j in (0..=i).rev() {
            let bj = &lin.b[j];
            for ii in 0..NU {
                for jj in 0..NU {
                    let v: T = (0..NX).map(|l| m[ii][l] * bj[l][jj]).sum();
                    h[idx(i, ii) * nv + idx(j, jj)] += v;
                    if i != j {
                        h[idx(j, jj) * nv + idx(i, ii)] += v;
                    }
                }
            }
            if j > 0 {
                let a = &lin.a[j];
                let mut next = [[T::zero(); NX]; NU];
                for ii in 0..NU {
                    for l in 0..NX {
                        next[ii][l] = (0..NX).map(|r| m[ii][r] * a[r][l]).sum();
                    }
                }
                m = next;
            }
        }
    }

    let (lo_u, hi_u) = (&prob.config.u_min, &prob.config.u_max);
    let mut lo = vec![T::zero(); nv];
    let mut hi = vec![T::zero(); nv];
    for k in 0..n {
        for i in 0..NU {
            lo[idx(k, i)] = lo_u[i] - d.controls[k][i];
            hi[idx(k, i)] = hi_u[i] - d.controls[k][i];
        }
    }
    let q_scale = q.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let tol = c::<T>(QP_TOLERANCE).max(T::epsilon() * c(100.0) * (T::one() + q_scale));
    let x0 = vec![T::zero(); nv];
    let sol = solve_box_qp(&h, &q, &lo, &hi, &x0, Some(order), tol, QP_MAX_ITERATIONS);

    let du: Vec<ControlVec<T>> = (0..n).map(|k| ControlVec::from_fn(|i| sol.x[idx(k, i)])).collect();
    let mut dx = Vec::with_capacity(n);
    for k in 0..n {
        let mut v = b_vec(&lin.b[k], &du[k]).sub(&res[k]);
        if k > 0 {
            v = v.add(&mat_vec(&lin.a[k], &dx[k - 1]));
        }
        dx.push(v);
    }
    let qp_grad: Vec<StateVec<T>> = (0..n)
        .map(|k| {
            let wk = &weights[k];
            grad.states[k].add(&StateVec::from_fn(|i| (0..NX).map(|j| wk[i][j] * dx[k][j]).sum()))
        })
        .collect();
    let qp_multipliers = backward_multipliers(lin, &qp_grad);
    Step { du, dx, qp_multipliers }
}

fn trial_point<T: Real>(d: &Decision<T>, step: &Step<T>, alpha: T, prob: &OcpProblem<T>) -> Decision<T> {
    let (lo, hi) = (&prob.config.u_min, &prob.config.u_max);
    Decision {
        controls: d
            .controls
            .iter()
            .zip(&step.du)
            .map(|(u, du)| u.axpy(alpha, du).clamp(lo, hi))
            .collect(),
        states: d.states.iter().zip(&step.dx).map(|(x, dx)| x.axpy(alpha, dx)).collect(),
    }
}

/// Runs the SQP from `init` and returns the last accepted iterate.
pub fn solve<T: Real>(prob: &OcpProblem<T>, init: &Decision<T>, cfg: &SolverConfig<T>) -> Result<SolveResult<T>> {
    let started = Instant::now();
    prob.validate()?;
    prob.check_decision(init)?;
    cfg.validate()?;
    let n = prob.horizon();

    let (lo, hi) = (&prob.config.u_min, &prob.config.u_max);
    let mut d = Decision {
        states: init.states.clone(),
        controls: init.controls.iter().map(|u| u.clamp(lo, hi)).collect(),
    };
    let mut objective = objective_unchecked(&d, prob);
    if !objective.is_finite() || !d.is_finite() {
        return Err(Error::NonFiniteObjective);
    }

    // bounds reach the active set component-major, then by time index
    let order: Vec<usize> = (0..NU).flat_map(|i| (0..n).map(move |k| k * NU + i)).collect();

    let mut penalty = T::zero();
    let mut history = Vec::new();
    let mut iterations = 0;
    let (status, kkt, cont) = loop {
        let lin = Linearization::at(&d, prob);
        let grad = gradient_unchecked(&d, prob);
        let res = residuals_unchecked(&d, prob);
        let lambda = backward_multipliers(&lin, &grad.states);
        let cont = inf_norm(&res);
        let kkt = stationarity(&d, prob, &lin, &grad, &lambda) + cont;
        if kkt <= cfg.kkt_tolerance && cont <= cfg.constraint_tolerance {
            break (SolveStatus::Converged, kkt, cont);
        }
        if iterations >= cfg.max_iterations {
            break (SolveStatus::MaxIterations, kkt, cont);
        }

        let step = qp_step(&d, prob, &lin, &grad, &res, &order);
        let lambda_max = step.qp_multipliers.iter().fold(T::zero(), |m, l| m.max(l.max_abs()));
        penalty = penalty.max(c::<T>(10.0) * lambda_max);

        let c1 = l1_norm(&res);
        let merit = objective + penalty * c1;
        let directional: T = (0..n)
            .map(|k| {
                (0..NU).map(|i| grad.controls[k][i] * step.du[k][i]).sum::<T>()
                    + (0..NX).map(|i| grad.states[k][i] * step.dx[k][i]).sum::<T>()
            })
            .sum::<T>()
            - penalty * c1;

        let mut alpha = T::one();
        let accepted = loop {
            let trial = trial_point(&d, &step, alpha, prob);
            let j = objective_unchecked(&trial, prob);
            let m = j + penalty * l1_norm(&residuals_unchecked(&trial, prob));
            let target = if directional < T::zero() {
                merit + c::<T>(ARMIJO) * alpha * directional
            } else {
                merit
            };
            if m.is_finite() && m <= target {
                break Some((trial, j, m));
            }
            alpha *= cfg.line_search_shrink;
            if alpha < cfg.line_search_min_step {
                break None;
            }
        };
        match accepted {
            Some((trial, j, m)) => {
                history.push(IterationRecord {
                    merit_before: merit,
                    merit_after: m,
                    penalty,
                    step_length: alpha,
                    kkt_residual: kkt,
                });
                d = trial;
                objective = j;
                iterations += 1;
            }
            None => break (SolveStatus::LineSearchFailure, kkt, cont),
        }
    };

    Ok(SolveResult {
        decision: d,
        iterations,
        kkt_residual: kkt,
        continuity_residual_inf: cont,
        objective,
        wall_time: started.elapsed(),
        status,
        history,
    })
}
