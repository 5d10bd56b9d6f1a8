//! Quadrotor controller model.
//!
//! Translational motion follows thrust along the body z-axis, gravity and linear
//! drag. Roll, pitch and yaw rate are the closed-loop responses of the vehicle's
//! attitude controllers, modelled as first-order lags toward their references.
//!
//! Attitude uses Z-Y-X (yaw, pitch, roll) Euler angles. Angles are never wrapped.

use std::ops::{Index, IndexMut};

use crate::error::{invalid, Result};
use crate::scalar::{c, Real};

/// Number of state entries.
pub const NX: usize = 10;
/// Number of input entries.
pub const NU: usize = 4;

pub const X: usize = 0;
pub const Y: usize = 1;
pub const Z: usize = 2;
pub const PHI: usize = 3;
pub const THETA: usize = 4;
pub const PSI: usize = 5;
pub const VX: usize = 6;
pub const VY: usize = 7;
pub const VZ: usize = 8;
pub const PSI_DOT: usize = 9;

pub const THRUST: usize = 0;
pub const PHI_REF: usize = 1;
pub const THETA_REF: usize = 2;
pub const PSI_DOT_REF: usize = 3;

/// `[x, y, z, phi, theta, psi, vx, vy, vz, psi_dot]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateVec<T>(pub [T; NX]);

/// `[thrust, phi_ref, theta_ref, psi_dot_ref]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlVec<T>(pub [T; NU]);

macro_rules! vec_common {
    ($name:ident, $n:expr) => {
        impl<T: Real> $name<T> {
            pub fn zeros() -> Self {
                Self([T::zero(); $n])
            }

            pub fn from_fn(f: impl FnMut(usize) -> T) -> Self {
                Self(std::array::from_fn(f))
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn max_abs(&self) -> T {
                self.0.iter().fold(T::zero(), |m, v| m.max(v.abs()))
            }

            pub fn sum_abs(&self) -> T {
                self.0.iter().map(|v| v.abs()).sum()
            }

            pub fn add(&self, other: &Self) -> Self {
                Self::from_fn(|i| self.0[i] + other.0[i])
            }

            pub fn sub(&self, other: &Self) -> Self {
                Self::from_fn(|i| self.0[i] - other.0[i])
            }

            pub fn scale(&self, s: T) -> Self {
                Self::from_fn(|i| self.0[i] * s)
            }

            /// `self + s * other`
            pub fn axpy(&self, s: T, other: &Self) -> Self {
                Self::from_fn(|i| self.0[i] + s * other.0[i])
            }

            pub fn as_slice(&self) -> &[T] {
                &self.0
            }
        }

        impl<T> Index<usize> for $name<T> {
            type Output = T;
            fn index(&self, i: usize) -> &T {
                &self.0[i]
            }
        }

        impl<T> IndexMut<usize> for $name<T> {
            fn index_mut(&mut self, i: usize) -> &mut T {
                &mut self.0[i]
            }
        }
    };
}

vec_common!(StateVec, NX);
vec_common!(ControlVec, NU);

impl<T: Real> StateVec<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(x: T, y: T, z: T, phi: T, theta: T, psi: T, vx: T, vy: T, vz: T, psi_dot: T) -> Self {
        Self([x, y, z, phi, theta, psi, vx, vy, vz, psi_dot])
    }

    /// Level and at rest at `pos`.
    pub fn at_rest(pos: [T; 3]) -> Self {
        let mut s = Self::zeros();
        s.set_position(pos);
        s
    }

    pub fn position(&self) -> [T; 3] {
        [self.0[X], self.0[Y], self.0[Z]]
    }

    pub fn set_position(&mut self, p: [T; 3]) {
        self.0[X] = p[0];
        self.0[Y] = p[1];
        self.0[Z] = p[2];
    }

    pub fn velocity(&self) -> [T; 3] {
        [self.0[VX], self.0[VY], self.0[VZ]]
    }

    pub fn set_velocity(&mut self, v: [T; 3]) {
        self.0[VX] = v[0];
        self.0[VY] = v[1];
        self.0[VZ] = v[2];
    }

    pub fn phi(&self) -> T {
        self.0[PHI]
    }

    pub fn theta(&self) -> T {
        self.0[THETA]
    }

    pub fn psi(&self) -> T {
        self.0[PSI]
    }
}

impl<T: Real> ControlVec<T> {
    pub fn new(thrust: T, phi_ref: T, theta_ref: T, psi_dot_ref: T) -> Self {
        Self([thrust, phi_ref, theta_ref, psi_dot_ref])
    }

    pub fn thrust(&self) -> T {
        self.0[THRUST]
    }

    /// Componentwise clamp into `[lo, hi]`.
    pub fn clamp(&self, lo: &Self, hi: &Self) -> Self {
        Self::from_fn(|i| self.0[i].max(lo.0[i]).min(hi.0[i]))
    }

    pub fn within(&self, lo: &Self, hi: &Self) -> bool {
        (0..NU).all(|i| lo.0[i] <= self.0[i] && self.0[i] <= hi.0[i])
    }
}

/// Physical and closed-loop attitude parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams<T> {
    /// Mass, kg.
    pub mass: T,
    /// Gravity, m/s².
    pub gravity: T,
    /// Linear drag coefficients along inertial x, y, z, 1/s.
    pub drag: [T; 3],
    pub tau_phi: T,
    pub tau_theta: T,
    pub tau_psi: T,
    pub k_phi: T,
    pub k_theta: T,
    pub k_psi: T,
}

impl<T: Real> Default for ModelParams<T> {
    /// Mass chosen so hover thrust sits in the 37.14..37.15 N band with g = 9.81.
    fn default() -> Self {
        Self {
            mass: c(3.787),
            gravity: c(9.81),
            drag: [c(0.1), c(0.1), c(0.2)],
            tau_phi: c(0.2),
            tau_theta: c(0.2),
            tau_psi: c(0.3),
            k_phi: T::one(),
            k_theta: T::one(),
            k_psi: T::one(),
        }
    }
}

impl<T: Real> ModelParams<T> {
    pub fn hover_thrust(&self) -> T {
        self.mass * self.gravity
    }

    pub fn hover_input(&self) -> ControlVec<T> {
        ControlVec::new(self.hover_thrust(), T::zero(), T::zero(), T::zero())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("tau_phi", self.tau_phi),
            ("tau_theta", self.tau_theta),
            ("tau_psi", self.tau_psi),
            ("k_phi", self.k_phi),
            ("k_theta", self.k_theta),
            ("k_psi", self.k_psi),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > T::zero()) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if self.drag.iter().any(|b| !(b.is_finite() && *b >= T::zero())) {
            return Err(invalid("drag", "coefficients must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Body-to-inertial rotation `Rz(psi) * Ry(theta) * Rx(phi)`.
pub fn rotation_matrix<T: Real>(phi: T, theta: T, psi: T) -> [[T; 3]; 3] {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    [
        [cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf],
        [sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf],
        [-st, ct * sf, ct * cf],
    ]
}

/// Continuous-time state derivative.
pub fn dynamics<T: Real>(x: &StateVec<T>, u: &ControlVec<T>, p: &ModelParams<T>) -> StateVec<T> {
    let r = rotation_matrix(x[PHI], x[THETA], x[PSI]);
    let a = u[THRUST] / p.mass;
    let mut d = StateVec::zeros();
    d[X] = x[VX];
    d[Y] = x[VY];
    d[Z] = x[VZ];
    d[PHI] = p.k_phi / p.tau_phi * (u[PHI_REF] - x[PHI]);
    d[THETA] = p.k_theta / p.tau_theta * (u[THETA_REF] - x[THETA]);
    d[PSI] = x[PSI_DOT];
    d[VX] = a * r[0][2] - p.drag[0] * x[VX];
    d[VY] = a * r[1][2] - p.drag[1] * x[VY];
    d[VZ] = a * r[2][2] - p.gravity - p.drag[2] * x[VZ];
    d[PSI_DOT] = p.k_psi / p.tau_psi * (u[PSI_DOT_REF] - x[PSI_DOT]);
    d
}

/// Partial derivatives of [`dynamics`]: `(df/dx, df/du)`.
pub fn dynamics_jacobians<T: Real>(
    x: &StateVec<T>,
    u: &ControlVec<T>,
    p: &ModelParams<T>,
) -> ([[T; NX]; NX], [[T; NU]; NX]) {
    let zero = T::zero();
    let mut fx = [[zero; NX]; NX];
    let mut fu = [[zero; NU]; NX];
    let (sf, cf) = x[PHI].sin_cos();
    let (st, ct) = x[THETA].sin_cos();
    let (sp, cp) = x[PSI].sin_cos();
    let m = p.mass;
    let a = u[THRUST] / m;

    fx[X][VX] = T::one();
    fx[Y][VY] = T::one();
    fx[Z][VZ] = T::one();
    fx[PSI][PSI_DOT] = T::one();

    let kf = p.k_phi / p.tau_phi;
    let kt = p.k_theta / p.tau_theta;
    let kp = p.k_psi / p.tau_psi;
    fx[PHI][PHI] = -kf;
    fu[PHI][PHI_REF] = kf;
    fx[THETA][THETA] = -kt;
    fu[THETA][THETA_REF] = kt;
    fx[PSI_DOT][PSI_DOT] = -kp;
    fu[PSI_DOT][PSI_DOT_REF] = kp;

    // third column of R and its angle derivatives
    fx[VX][PHI] = a * (sp * cf - cp * st * sf);
    fx[VX][THETA] = a * cp * ct * cf;
    fx[VX][PSI] = a * (cp * sf - sp * st * cf);
    fx[VX][VX] = -p.drag[0];
    fu[VX][THRUST] = (cp * st * cf + sp * sf) / m;

    fx[VY][PHI] = a * (-sp * st * sf - cp * cf);
    fx[VY][THETA] = a * sp * ct * cf;
    fx[VY][PSI] = a * (cp * st * cf + sp * sf);
    fx[VY][VY] = -p.drag[1];
    fu[VY][THRUST] = (sp * st * cf - cp * sf) / m;

    fx[VZ][PHI] = -a * ct * sf;
    fx[VZ][THETA] = -a * st * cf;
    fx[VZ][VZ] = -p.drag[2];
    fu[VZ][THRUST] = ct * cf / m;

    (fx, fu)
}

fn check_dt<T: Real>(dt: T) -> Result<()> {
    if dt.is_finite() && dt > T::zero() {
        Ok(())
    } else {
        Err(invalid("dt", format!("must be finite and > 0, got {dt}")))
    }
}

/// One forward Euler step of an arbitrary derivative field.
pub fn euler_with<T: Real>(f: impl Fn(&StateVec<T>) -> StateVec<T>, x: &StateVec<T>, dt: T) -> StateVec<T> {
    x.axpy(dt, &f(x))
}

/// One classic fourth-order Runge-Kutta step of an arbitrary derivative field.
pub fn rk4_with<T: Real>(f: impl Fn(&StateVec<T>) -> StateVec<T>, x: &StateVec<T>, dt: T) -> StateVec<T> {
    let half = dt * c(0.5);
    let k1 = f(x);
    let k2 = f(&x.axpy(half, &k1));
    let k3 = f(&x.axpy(half, &k2));
    let k4 = f(&x.axpy(dt, &k3));
    let sixth = dt / c(6.0);
    StateVec::from_fn(|i| x[i] + sixth * (k1[i] + c::<T>(2.0) * (k2[i] + k3[i]) + k4[i]))
}

/// `x + dynamics(x, u) * dt`. No argument checks; see [`step_euler`].
#[inline]
pub fn euler_unchecked<T: Real>(x: &StateVec<T>, u: &ControlVec<T>, p: &ModelParams<T>, dt: T) -> StateVec<T> {
    euler_with(|s| dynamics(s, u, p), x, dt)
}

pub fn step_euler<T: Real>(x: &StateVec<T>, u: &ControlVec<T>, p: &ModelParams<T>, dt: T) -> Result<StateVec<T>> {
    check_dt(dt)?;
    Ok(euler_unchecked(x, u, p, dt))
}

/// RK4 step with the input held constant over the interval.
pub fn step_rk4<T: Real>(x: &StateVec<T>, u: &ControlVec<T>, p: &ModelParams<T>, dt: T) -> Result<StateVec<T>> {
    check_dt(dt)?;
    Ok(rk4_with(|s| dynamics(s, u, p), x, dt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hover() -> (StateVec<f64>, ControlVec<f64>, ModelParams<f64>) {
        let p = ModelParams::default();
        (StateVec::at_rest([1.0, -2.0, 1.5]), p.hover_input(), p)
    }

    #[test]
    fn rotation_identity_and_yaw() {
        let r = rotation_matrix(0.0, 0.0, 0.0);
        for (i, row) in r.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
            }
        }
        let r = rotation_matrix(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        // body x-axis is the first column
        assert!((r[0][0]).abs() < 1e-15);
        assert!((r[1][0] - 1.0).abs() < 1e-15);
        assert!((r[2][0]).abs() < 1e-15);
    }

    #[test]
    fn rotation_orthonormal() {
        let r = rotation_matrix(0.1, -0.2, 0.3);
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hover_is_equilibrium() {
        let (x, u, p) = hover();
        let d = dynamics(&x, &u, &p);
        assert!(d.max_abs() < 1e-14, "{d:?}");
        assert_eq!(step_euler(&x, &u, &p, 0.05).unwrap(), x.axpy(0.05, &d));
        assert!(step_euler(&x, &u, &p, 0.05).unwrap().sub(&x).max_abs() < 1e-14);
        assert!(step_rk4(&x, &u, &p, 0.05).unwrap().sub(&x).max_abs() < 1e-14);
    }

    #[test]
    fn free_fall() {
        let (x, _, p) = hover();
        let u = ControlVec::zeros();
        let d = dynamics(&x, &u, &p);
        assert_eq!(d[VZ], -p.gravity);
        for i in (0..NX).filter(|&i| i != VZ) {
            assert_eq!(d[i], 0.0);
        }
        let e = step_euler(&x, &u, &p, 0.1).unwrap();
        assert!((e[VZ] + p.gravity * 0.1).abs() < 1e-15);
        assert_eq!(e[Z], x[Z]);
        // drag makes the exact answer slightly smaller than g dt²/2
        let r = step_rk4(&x, &u, &p, 0.1).unwrap();
        let drop = x[Z] - r[Z];
        let ideal = p.gravity * 0.01 / 2.0;
        assert!(
            drop <= ideal && (drop - ideal).abs() / ideal < 0.01,
            "{drop} vs {ideal}"
        );
        let no_drag = ModelParams { drag: [0.0; 3], ..p };
        let r = step_rk4(&x, &u, &no_drag, 0.1).unwrap();
        assert!((x[Z] - r[Z] - ideal).abs() < 1e-14);
    }

    #[test]
    fn roll_step() {
        let p = ModelParams::<f64> {
            tau_phi: 0.2,
            k_phi: 1.0,
            ..ModelParams::default()
        };
        let x = StateVec::<f64>::zeros();
        let u = ControlVec::new(p.hover_thrust(), 0.2, 0.0, 0.0);
        let d = dynamics(&x, &u, &p);
        assert!((d[PHI] - 1.0).abs() < 1e-15);
        let e = step_euler(&x, &u, &p, 0.05).unwrap();
        assert!((e[PHI] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_dt() {
        let (x, u, p) = hover();
        assert!(step_euler(&x, &u, &p, 0.0).is_err());
        assert!(step_euler(&x, &u, &p, -0.1).is_err());
        assert!(step_rk4(&x, &u, &p, 0.0).is_err());
        assert!(step_rk4(&x, &u, &p, f64::NAN).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::<f64>::default().validate().is_ok());
        let bad = ModelParams {
            mass: 0.0,
            ..ModelParams::<f64>::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelParams {
            drag: [0.1, -0.1, 0.0],
            ..ModelParams::<f64>::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn f32_hover() {
        let p = ModelParams::<f32>::default();
        let x = StateVec::at_rest([0.0f32, 0.0, 1.0]);
        let d = dynamics(&x, &p.hover_input(), &p);
        assert!(d.max_abs() < 1e-5);
    }

    #[test]
    fn jacobian_against_central_differences() {
        let p = ModelParams::<f64>::default();
        let x = StateVec::new(0.3, -0.1, 1.2, 0.15, -0.22, 0.7, 0.4, -0.3, 0.2, 0.1);
        let u = ControlVec::new(35.0, 0.1, -0.05, 0.2);
        let (fx, fu) = dynamics_jacobians(&x, &u, &p);
        let h = 1e-6;
        for j in 0..NX {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let dp = dynamics(&xp, &u, &p);
            let dm = dynamics(&xm, &u, &p);
            for i in 0..NX {
                let fd = (dp[i] - dm[i]) / (2.0 * h);
                assert!((fd - fx[i][j]).abs() < 1e-7, "fx[{i}][{j}] {} vs {fd}", fx[i][j]);
            }
        }
        for j in 0..NU {
            let mut up = u;
            let mut um = u;
            up[j] += h;
            um[j] -= h;
            let dp = dynamics(&x, &up, &p);
            let dm = dynamics(&x, &um, &p);
            for i in 0..NX {
                let fd = (dp[i] - dm[i]) / (2.0 * h);
                assert!((fd - fu[i][j]).abs() < 1e-7, "fu[{i}][{j}]");
            }
        }
    }
}
