//! Box-constrained convex QP: `min 0.5 x'Hx + q'x  s.t.  lo <= x <= hi`.
//!
//! Projected Newton method: bounds that are (nearly) active with an outward
//! gradient are held by a diagonal step, the remaining variables take a
//! Newton step, and the combined step is projected back onto the box with a
//! backtracking search along the projection arc.

use crate::linalg::{cholesky, cholesky_solve, symv};
use crate::scalar::{c, Real};

#[derive(Debug, Clone)]
pub struct BoxQpSolution<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    /// `|x - P(x - grad)|_inf` at the returned point.
    pub projected_gradient: T,
    pub converged: bool,
}

/// Infinity norm of `x - P(x - g)`.
pub fn projected_gradient_norm<T: Real>(x: &[T], g: &[T], lo: &[T], hi: &[T]) -> T {
    let mut m = T::zero();
    for i in 0..x.len() {
        let p = (x[i] - g[i]).max(lo[i]).min(hi[i]);
        m = m.max((x[i] - p).abs());
    }
    m
}

/// Solves the box QP from `x0` (projected onto the box).
///
/// `order` fixes the sequence in which variables are visited when the held and
/// free sets are formed, so the reduced systems are always assembled the same
/// way; `None` means index order.
#[allow(clippy::too_many_arguments)]
pub fn solve_box_qp<T: Real>(
    h: &[T],
    q: &[T],
    lo: &[T],
    hi: &[T],
    x0: &[T],
    order: Option<&[usize]>,
    tol: T,
    max_iterations: usize,
) -> BoxQpSolution<T> {
    let n = q.len();
    debug_assert_eq!(h.len(), n * n);
    let mut x: Vec<T> = (0..n).map(|i| x0[i].max(lo[i]).min(hi[i])).collect();
    let natural: Vec<usize>;
    let order = match order {
        Some(o) => o,
        None => {
            natural = (0..n).collect();
            &natural
        }
    };

    // 1/L with L a Gershgorin bound on the largest eigenvalue
    let lipschitz = (0..n)
        .map(|i| h[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum::<T>())
        .fold(T::zero(), T::max);
    let pg_step = if lipschitz > T::zero() {
        T::one() / lipschitz
    } else {
        T::one()
    };
    let sigma = c::<T>(1e-4);
    let tiny = T::min_positive_value().sqrt();

    let mut g = vec![T::zero(); n];
    let mut dir = vec![T::zero(); n];
    let mut step = vec![T::zero(); n];
    let mut h_step = vec![T::zero(); n];
    let mut free = Vec::with_capacity(n);
    let mut sub = Vec::with_capacity(n * n);
    let mut rhs = Vec::with_capacity(n);
    let mut factored: Option<Vec<usize>> = None;
    let mut iterations = 0;

    while iterations < max_iterations {
        gradient(h, q, &x, &mut g);
        let pg = projected_gradient_norm(&x, &g, lo, hi);
        if pg <= tol {
            return BoxQpSolution {
                x,
                iterations,
                projected_gradient: pg,
                converged: true,
            };
        }
        iterations += 1;

        let eps = pg.min(c(1e-3));
        free.clear();
        for &i in order {
            let held = (x[i] <= lo[i] + eps && g[i] > T::zero()) || (x[i] >= hi[i] - eps && g[i] < T::zero());
            if held {
                dir[i] = -g[i] / h[i * n + i].max(tiny);
            } else {
                free.push(i);
            }
        }
        if !free.is_empty() {
            let m = free.len();
            // the factor of the reduced Hessian only changes with the free set
            if factored.as_deref() != Some(&free[..]) {
                factored = factor_regularized(h, n, &free, &mut sub).then(|| free.clone());
            }
            rhs.clear();
            rhs.extend(free.iter().map(|&i| -g[i]));
            if factored.is_some() {
                cholesky_solve(&sub, m, &mut rhs);
            } else {
                rhs.iter_mut().for_each(|v| *v *= pg_step);
            }
            for (k, &i) in free.iter().enumerate() {
                dir[i] = rhs[k];
            }
        }

        // Armijo search along the projection arc, objective change evaluated exactly
        let mut alpha = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            for i in 0..n {
                step[i] = (x[i] + alpha * dir[i]).max(lo[i]).min(hi[i]) - x[i];
            }
            let slope: T = g.iter().zip(&step).map(|(a, b)| *a * *b).sum();
            if !(slope < T::zero()) {
                break;
            }
            symv(h, n, &step, &mut h_step);
            let curvature: T = step.iter().zip(&h_step).map(|(a, b)| *a * *b).sum();
            if slope + c::<T>(0.5) * curvature <= sigma * slope {
                accepted = true;
                break;
            }
            alpha *= c(0.5);
        }
        if !accepted {
            for i in 0..n {
                step[i] = (x[i] - pg_step * g[i]).max(lo[i]).min(hi[i]) - x[i];
            }
        }
        for i in 0..n {
            x[i] = (x[i] + step[i]).max(lo[i]).min(hi[i]);
        }
    }

    gradient(h, q, &x, &mut g);
    let final_pg = projected_gradient_norm(&x, &g, lo, hi);
    BoxQpSolution {
        converged: final_pg <= tol,
        x,
        iterations,
        projected_gradient: final_pg,
    }
}

fn gradient<T: Real>(h: &[T], q: &[T], x: &[T], g: &mut [T]) {
    symv(h, q.len(), x, g);
    for (gi, qi) in g.iter_mut().zip(q) {
        *gi += *qi;
    }
}

/// Cholesky factor of `h` restricted to `free`, written to `sub`, with a
/// growing diagonal shift if the reduced Hessian is singular.
fn factor_regularized<T: Real>(h: &[T], n: usize, free: &[usize], sub: &mut Vec<T>) -> bool {
    let m = free.len();
    let fill = |sub: &mut Vec<T>, shift: T| {
        sub.clear();
        for &i in free {
            sub.extend(free.iter().map(|&j| h[i * n + j]));
        }
        for k in 0..m {
            sub[k * m + k] += shift;
        }
    };
    fill(sub, T::zero());
    if cholesky(sub, m) {
        return true;
    }
    let scale = free
        .iter()
        .map(|&i| h[i * n + i].abs())
        .fold(T::zero(), T::max)
        .max(T::one());
    let mut shift = scale * c(1e-10);
    for _ in 0..12 {
        fill(sub, shift);
        if cholesky(sub, m) {
            return true;
        }
        shift *= c(10.0);
    }
    false
}
