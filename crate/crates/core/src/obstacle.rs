//! Spherical obstacles, clearance margins and the repulsive potential.
//!
//! Each obstacle contributes `0.5 * eta * (1/d - 1/(r + d_s))^2` while the
//! vehicle is inside the safety sphere of radius `r + d_s`, and nothing
//! outside it. Value and gradient both vanish on the sphere.

use crate::error::{invalid, Result};
use crate::scalar::{c, Real};

/// Distance floor applied before inverting `d`.
pub const MIN_DISTANCE: f64 = 1e-6;

pub type Vec3<T> = [T; 3];
pub type Mat3<T> = [[T; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle<T> {
    pub center: Vec3<T>,
    pub radius: T,
    /// Safety distance added to the radius.
    pub safety: T,
}

impl<T: Real> Obstacle<T> {
    pub fn new(center: Vec3<T>, radius: T, safety: T) -> Result<Self> {
        let o = Self { center, radius, safety };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > T::zero()) {
            return Err(invalid("radius", format!("must be > 0, got {}", self.radius)));
        }
        if !(self.safety.is_finite() && self.safety >= T::zero()) {
            return Err(invalid("safety", format!("must be >= 0, got {}", self.safety)));
        }
        if self.center.iter().any(|v| !v.is_finite()) {
            return Err(invalid("center", "must be finite"));
        }
        Ok(())
    }

    /// `r + d_s`.
    pub fn influence_radius(&self) -> T {
        self.radius + self.safety
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleField<T> {
    pub obstacles: Vec<Obstacle<T>>,
    /// Repulsion gain.
    pub eta: T,
}

impl<T: Real> Default for ObstacleField<T> {
    fn default() -> Self {
        Self {
            obstacles: Vec::new(),
            eta: c(10.0),
        }
    }
}

impl<T: Real> ObstacleField<T> {
    pub fn new(obstacles: Vec<Obstacle<T>>, eta: T) -> Result<Self> {
        let f = Self { obstacles, eta };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta >= T::zero()) {
            return Err(invalid("eta", format!("must be >= 0, got {}", self.eta)));
        }
        self.obstacles.iter().try_for_each(Obstacle::validate)
    }

    pub fn is_empty(&self) -> bool {
        self.obstacles.is_empty()
    }
}

fn diff<T: Real>(pos: &Vec3<T>, center: &Vec3<T>) -> Vec3<T> {
    [pos[0] - center[0], pos[1] - center[1], pos[2] - center[2]]
}

fn norm<T: Real>(v: &Vec3<T>) -> T {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn distance<T: Real>(pos: &Vec3<T>, obs: &Obstacle<T>) -> T {
    norm(&diff(pos, &obs.center))
}

/// Signed clearance `d - (r + d_s)`; non-negative when the safety sphere is respected.
pub fn margin<T: Real>(pos: &Vec3<T>, obs: &Obstacle<T>) -> T {
    distance(pos, obs) - obs.influence_radius()
}

pub fn potential<T: Real>(pos: &Vec3<T>, obs: &Obstacle<T>, eta: T) -> T {
    let rho = obs.influence_radius();
    let d = distance(pos, obs);
    if d >= rho {
        return T::zero();
    }
    let s = T::one() / d.max(c(MIN_DISTANCE)) - T::one() / rho;
    c::<T>(0.5) * eta * s * s
}

pub fn potential_gradient<T: Real>(pos: &Vec3<T>, obs: &Obstacle<T>, eta: T) -> Vec3<T> {
    let rho = obs.influence_radius();
    let delta = diff(pos, &obs.center);
    let d = norm(&delta);
    // below the floor the potential is constant in d
    if d >= rho || d < c(MIN_DISTANCE) {
        return [T::zero(); 3];
    }
    let s = T::one() / d - T::one() / rho;
    let k = -eta * s / (d * d * d);
    [k * delta[0], k * delta[1], k * delta[2]]
}

/// Positive semidefinite part of the potential's Hessian.
///
/// The exact Hessian has a positive radial eigenvalue
/// `eta * (1/d^4 + 2 s / d^3)` and a negative tangential one `-eta * s / d^3`;
/// the tangential part is dropped.
pub fn potential_hessian_psd<T: Real>(pos: &Vec3<T>, obs: &Obstacle<T>, eta: T) -> Mat3<T> {
    let rho = obs.influence_radius();
    let delta = diff(pos, &obs.center);
    let d = norm(&delta);
    if d >= rho || d < c(MIN_DISTANCE) {
        return [[T::zero(); 3]; 3];
    }
    let s = T::one() / d - T::one() / rho;
    let d3 = d * d * d;
    let radial = eta * (T::one() / (d3 * d) + c::<T>(2.0) * s / d3);
    outer_scaled(&delta, radial / (d * d))
}

/// Exterior quadratic penalty `weight * min(margin, 0)^2`, used when the
/// clearance is enforced as a constraint instead of through the potential.
pub fn hard_penalty<T: Real>(pos: &Vec3<T>, obs: &Obstacle<T>, weight: T) -> T {
    let m = margin(pos, obs);
    if m >= T::zero() {
        T::zero()
    } else {
        weight * m * m
    }
}

pub fn hard_penalty_gradient<T: Real>(pos: &Vec3<T>, obs: &Obstacle<T>, weight: T) -> Vec3<T> {
    let delta = diff(pos, &obs.center);
    let d = norm(&delta);
    let m = d - obs.influence_radius();
    if m >= T::zero() || d < c(MIN_DISTANCE) {
        return [T::zero(); 3];
    }
    let k = c::<T>(2.0) * weight * m / d;
    [k * delta[0], k * delta[1], k * delta[2]]
}

/// Radial (positive) curvature of [`hard_penalty`].
pub fn hard_penalty_hessian_psd<T: Real>(pos: &Vec3<T>, obs: &Obstacle<T>, weight: T) -> Mat3<T> {
    let delta = diff(pos, &obs.center);
    let d = norm(&delta);
    if d - obs.influence_radius() >= T::zero() || d < c(MIN_DISTANCE) {
        return [[T::zero(); 3]; 3];
    }
    outer_scaled(&delta, c::<T>(2.0) * weight / (d * d))
}

fn outer_scaled<T: Real>(v: &Vec3<T>, s: T) -> Mat3<T> {
    let mut m = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = s * v[i] * v[j];
        }
    }
    m
}

/// Sum of [`potential`] over the field.
pub fn total_potential<T: Real>(pos: &Vec3<T>, field: &ObstacleField<T>) -> T {
    field.obstacles.iter().map(|o| potential(pos, o, field.eta)).sum()
}

pub fn total_potential_gradient<T: Real>(pos: &Vec3<T>, field: &ObstacleField<T>) -> Vec3<T> {
    let mut g = [T::zero(); 3];
    for o in &field.obstacles {
        let gi = potential_gradient(pos, o, field.eta);
        for k in 0..3 {
            g[k] += gi[k];
        }
    }
    g
}
