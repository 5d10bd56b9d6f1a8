//! Clamped B-spline reference paths and their time-sampled trajectories.

use crate::error::{invalid, Error, Result};
use crate::model::{ControlVec, StateVec, PSI_DOT};
use crate::scalar::Real;

/// A clamped B-spline curve in 3-D.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplinePath<T> {
    degree: usize,
    control_points: Vec<[T; 3]>,
    knots: Vec<T>,
}

/// Cox-de Boor basis function `N_{i,p}(t)`.
///
/// Degree-zero functions use half-open spans, except that the parameter equal
/// to the final knot belongs to the last non-empty span so clamped curves reach
/// their final control point. Any 0/0 ratio in the recursion is taken as 0.
pub fn basis<T: Real>(i: usize, p: usize, t: T, knots: &[T]) -> Result<T> {
    if i + p + 1 >= knots.len() {
        return Err(Error::BasisIndexOutOfRange {
            index: i,
            degree: p,
            knots: knots.len(),
        });
    }
    Ok(basis_rec(i, p, t, knots))
}

fn basis_rec<T: Real>(i: usize, p: usize, t: T, knots: &[T]) -> T {
    if p == 0 {
        let (lo, hi) = (knots[i], knots[i + 1]);
        let last = knots[knots.len() - 1];
        let inside = lo <= t && t < hi;
        // closes the final non-degenerate span at the right end
        let at_end = t == last && hi == last && lo < hi;
        return if inside || at_end { T::one() } else { T::zero() };
    }
    let mut value = T::zero();
    let left_den = knots[i + p] - knots[i];
    if left_den != T::zero() {
        value += (t - knots[i]) / left_den * basis_rec(i, p - 1, t, knots);
    }
    let right_den = knots[i + p + 1] - knots[i + 1];
    if right_den != T::zero() {
        value += (knots[i + p + 1] - t) / right_den * basis_rec(i + 1, p - 1, t, knots);
    }
    value
}

/// Clamped knot vector on `[0, 1]` with uniformly spaced interior knots.
pub fn make_clamped_knots<T: Real>(n_ctrl: usize, p: usize) -> Result<Vec<T>> {
    if n_ctrl <= p {
        return Err(invalid(
            "n_ctrl",
            format!("need at least degree + 1 = {} control points, got {n_ctrl}", p + 1),
        ));
    }
    let spans = n_ctrl - p;
    let mut knots = Vec::with_capacity(n_ctrl + p + 1);
    knots.extend(std::iter::repeat_n(T::zero(), p + 1));
    for j in 1..spans {
        knots.push(T::lit(j as f64) / T::lit(spans as f64));
    }
    knots.extend(std::iter::repeat_n(T::one(), p + 1));
    Ok(knots)
}

impl<T: Real> BSplinePath<T> {
    pub fn new(degree: usize, control_points: Vec<[T; 3]>, knots: Vec<T>) -> Result<Self> {
        if degree == 0 {
            return Err(invalid("degree", "must be >= 1"));
        }
        if control_points.len() < degree + 1 {
            return Err(invalid("control_points", format!("need at least {}", degree + 1)));
        }
        if knots.len() != control_points.len() + degree + 1 {
            return Err(invalid(
                "knots",
                format!(
                    "expected {} knots, got {}",
                    control_points.len() + degree + 1,
                    knots.len()
                ),
            ));
        }
        if knots.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(invalid("knots", "must be non-decreasing"));
        }
        let n = knots.len();
        let clamped_lo = knots[..=degree].iter().all(|k| *k == knots[0]);
        let clamped_hi = knots[n - degree - 1..].iter().all(|k| *k == knots[n - 1]);
        if !(clamped_lo && clamped_hi) || knots[0] == knots[n - 1] {
            return Err(invalid("knots", "must be clamped with a non-empty range"));
        }
        if control_points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("control_points", "must be finite"));
        }
        Ok(Self {
            degree,
            control_points,
            knots,
        })
    }

    /// Uses the waypoints directly as control points on a uniform clamped knot
    /// vector. The curve starts and ends on the first and last waypoint and
    /// only approximates the interior ones.
    pub fn from_waypoints(waypoints: &[[T; 3]], degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(invalid("degree", "must be >= 1"));
        }
        if waypoints.len() <= degree {
            return Err(invalid(
                "waypoints",
                format!(
                    "need at least {} waypoints for degree {degree}, got {}",
                    degree + 1,
                    waypoints.len()
                ),
            ));
        }
        let knots = make_clamped_knots(waypoints.len(), degree)?;
        Self::new(degree, waypoints.to_vec(), knots)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn control_points(&self) -> &[[T; 3]] {
        &self.control_points
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn parameter_range(&self) -> (T, T) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    pub fn eval(&self, t: T) -> Result<[T; 3]> {
        let (lo, hi) = self.parameter_range();
        if !(lo <= t && t <= hi) {
            return Err(Error::ParameterOutOfRange {
                value: t.to_f64_lossy(),
                lo: lo.to_f64_lossy(),
                hi: hi.to_f64_lossy(),
            });
        }
        let mut out = [T::zero(); 3];
        for (i, cp) in self.control_points.iter().enumerate() {
            let b = basis_rec(i, self.degree, t, &self.knots);
            if b != T::zero() {
                for k in 0..3 {
                    out[k] += b * cp[k];
                }
            }
        }
        Ok(out)
    }
}

/// Convenience wrapper for [`BSplinePath::from_waypoints`].
pub fn build_from_waypoints<T: Real>(waypoints: &[[T; 3]], degree: usize) -> Result<BSplinePath<T>> {
    BSplinePath::from_waypoints(waypoints, degree)
}

/// One reference node: state and input the controller tracks at a time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint<T> {
    pub state: StateVec<T>,
    pub input: ControlVec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory<T> {
    pub dt: T,
    pub points: Vec<ReferencePoint<T>>,
}

impl<T: Real> ReferenceTrajectory<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `len` consecutive points starting at `start`. Indices past the end
    /// hold the final position at rest, so the tail of the window asks for a
    /// hover at the goal.
    pub fn window(&self, start: usize, len: usize) -> Vec<ReferencePoint<T>> {
        let last = self.points.len() - 1;
        let mut held = self.points[last];
        held.state.set_velocity([T::zero(); 3]);
        held.state[PSI_DOT] = T::zero();
        (start..start + len)
            .map(|k| if k <= last { self.points[k] } else { held })
            .collect()
    }

    pub fn positions(&self) -> impl Iterator<Item = [T; 3]> + '_ {
        self.points.iter().map(|p| p.state.position())
    }
}

/// Sweeps the spline parameter linearly over `duration`, sampling every `dt`.
///
/// Velocity references are forward differences of the sampled positions (the
/// last one repeated); attitude and yaw-rate references are zero and every
/// input reference is `(hover_thrust, 0, 0, 0)`.
pub fn sample_reference<T: Real>(
    path: &BSplinePath<T>,
    duration: T,
    dt: T,
    hover_thrust: T,
) -> Result<ReferenceTrajectory<T>> {
    if !(dt.is_finite() && dt > T::zero()) {
        return Err(invalid("dt", format!("must be > 0, got {dt}")));
    }
    if !(duration.is_finite() && duration >= dt) {
        return Err(invalid("duration", format!("must be >= dt, got {duration}")));
    }
    let steps = (duration / dt + T::lit(1e-9)).floor().to_usize().unwrap_or(0);
    let (lo, hi) = path.parameter_range();
    let positions = (0..=steps)
        .map(|k| {
            let frac = (T::lit(k as f64) * dt / duration).min(T::one());
            path.eval(lo + (hi - lo) * frac)
        })
        .collect::<Result<Vec<_>>>()?;

    let input = ControlVec::new(hover_thrust, T::zero(), T::zero(), T::zero());
    let mut points = Vec::with_capacity(positions.len());
    for k in 0..positions.len() {
        let mut state = StateVec::at_rest(positions[k]);
        let v = if k + 1 < positions.len() {
            let (a, b) = (positions[k], positions[k + 1]);
            [(b[0] - a[0]) / dt, (b[1] - a[1]) / dt, (b[2] - a[2]) / dt]
        } else {
            points
                .last()
                .map(|p: &ReferencePoint<T>| p.state.velocity())
                .unwrap_or([T::zero(); 3])
        };
        state.set_velocity(v);
        points.push(ReferencePoint { state, input });
    }
    Ok(ReferenceTrajectory { dt, points })
}
