//! Receding-horizon closed loop: solve, apply the first input, advance the
//! plant, repeat. Also computes the tracking metrics of a finished run.

use std::time::Duration;

use thiserror::Error;

use crate::error::{invalid, Error, Result};
use crate::model::{dynamics, euler_with, rk4_with, ControlVec, ModelParams, StateVec, THETA, THRUST, VX};
use crate::obstacle::{distance, margin, ObstacleField};
use crate::ocp::{OcpConfig, OcpProblem, Weights};
use crate::path::{sample_reference, BSplinePath, ReferenceTrajectory};
use crate::scalar::{c, Real};
use crate::solver::{cold_start, shift_warm_start, solve, SolveStatus, SolverConfig};

pub mod presets;

/// Largest pitch magnitude tolerated before the run is aborted (`pi/2 - 0.1`).
pub fn pitch_limit<T: Real>() -> T {
    T::FRAC_PI_2() - c(0.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlantIntegrator {
    #[default]
    Euler,
    Rk4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub name: String,
    pub waypoints: Vec<[T; 3]>,
    pub spline_degree: usize,
    /// Time to sweep the whole spline, s.
    pub traversal_duration: T,
    pub initial_state: StateVec<T>,
    pub params: ModelParams<T>,
    pub weights: Weights<T>,
    pub ocp: OcpConfig<T>,
    pub solver: SolverConfig<T>,
    pub field: ObstacleField<T>,
    /// Simulated time, s; a whole multiple of `ocp.dt`.
    pub sim_duration: T,
    pub plant: PlantIntegrator,
    /// Constant acceleration disturbance on the plant, m/s².
    pub wind: [T; 3],
    pub arrival_radius: T,
    /// Shift the previous solution as the initial guess (otherwise cold start every step).
    pub warm_start: bool,
}

impl<T: Real> Scenario<T> {
    /// Scenario with library defaults, starting at rest on the first waypoint.
    pub fn with_defaults(name: impl Into<String>, waypoints: Vec<[T; 3]>) -> Self {
        let start = waypoints.first().copied().unwrap_or([T::zero(); 3]);
        Self {
            name: name.into(),
            waypoints,
            spline_degree: 3,
            traversal_duration: c(20.0),
            initial_state: StateVec::at_rest(start),
            params: ModelParams::default(),
            weights: Weights::default(),
            ocp: OcpConfig::default(),
            solver: SolverConfig::default(),
            field: ObstacleField::default(),
            sim_duration: c(25.0),
            plant: PlantIntegrator::Euler,
            wind: [T::zero(); 3],
            arrival_radius: c(0.3),
            warm_start: true,
        }
    }

    pub fn path(&self) -> Result<BSplinePath<T>> {
        BSplinePath::from_waypoints(&self.waypoints, self.spline_degree)
    }

    pub fn reference(&self) -> Result<ReferenceTrajectory<T>> {
        sample_reference(
            &self.path()?,
            self.traversal_duration,
            self.ocp.dt,
            self.params.hover_thrust(),
        )
    }

    /// Number of plant steps; the log has one more record.
    pub fn num_steps(&self) -> Result<usize> {
        let ratio = self.sim_duration / self.ocp.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > c(1e-6) {
            return Err(invalid(
                "sim_duration",
                format!("must be a whole multiple of ocp.dt ({})", self.ocp.dt),
            ));
        }
        steps.to_usize().ok_or_else(|| invalid("sim_duration", "must be >= 0"))
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.weights.validate()?;
        self.ocp.validate()?;
        self.solver.validate()?;
        self.field.validate()?;
        self.path()?;
        if !(self.traversal_duration.is_finite() && self.traversal_duration >= self.ocp.dt) {
            return Err(invalid("traversal_duration", "must be >= ocp.dt"));
        }
        if !(self.sim_duration >= self.traversal_duration) {
            return Err(invalid("sim_duration", "must be >= traversal_duration"));
        }
        if !(self.arrival_radius.is_finite() && self.arrival_radius > T::zero()) {
            return Err(invalid("arrival_radius", "must be > 0"));
        }
        if !self.initial_state.is_finite() {
            return Err(invalid("initial_state", "must be finite"));
        }
        if self.initial_state[THETA].abs() >= pitch_limit() {
            return Err(invalid("initial_state", "pitch outside the supported range"));
        }
        if self.wind.iter().any(|w| !w.is_finite()) {
            return Err(invalid("wind", "must be finite"));
        }
        self.num_steps()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<T> {
    pub time: T,
    pub state: StateVec<T>,
    pub input: ControlVec<T>,
    pub reference: StateVec<T>,
    pub iterations: usize,
    pub solve_time: Duration,
    pub kkt_residual: T,
    pub status: SolveStatus,
    /// Position error against the time-indexed reference.
    pub deviation: T,
    /// Distance to the nearest point of the sampled reference polyline.
    pub closest_point_deviation: T,
    pub obstacle_distances: Vec<T>,
    pub obstacle_margins: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog<T> {
    pub dt: T,
    pub records: Vec<StepRecord<T>>,
}

#[derive(Debug, Error)]
pub enum SimError<T: Real> {
    #[error(transparent)]
    Invalid(#[from] Error),
    #[error("simulation aborted at t = {time}: {reason}")]
    Aborted { time: T, reason: String, log: SimLog<T> },
}

fn norm3<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn distance_to_polyline<T: Real>(p: &[T; 3], pts: &[[T; 3]]) -> T {
    if pts.len() == 1 {
        return norm3(p, &pts[0]);
    }
    let mut best = T::infinity();
    for w in pts.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
        let t = if len2 > T::zero() {
            (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1] + (p[2] - a[2]) * ab[2]) / len2)
                .max(T::zero())
                .min(T::one())
        } else {
            T::zero()
        };
        let q = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
        best = best.min(norm3(p, &q));
    }
    best
}

fn plant_step<T: Real>(s: &Scenario<T>, x: &StateVec<T>, u: &ControlVec<T>) -> StateVec<T> {
    let f = |state: &StateVec<T>| {
        let mut d = dynamics(state, u, &s.params);
        for i in 0..3 {
            d[VX + i] += s.wind[i];
        }
        d
    };
    match s.plant {
        PlantIntegrator::Euler => euler_with(f, x, s.ocp.dt),
        PlantIntegrator::Rk4 => rk4_with(f, x, s.ocp.dt),
    }
}

/// Runs the scenario to completion.
///
/// A solver error or a pitch excursion beyond [`pitch_limit`] stops the run and
/// returns the records gathered so far inside [`SimError::Aborted`].
pub fn run_closed_loop<T: Real>(s: &Scenario<T>) -> Result<SimLog<T>, SimError<T>> {
    s.validate()?;
    let reference = s.reference()?;
    let ref_positions: Vec<[T; 3]> = reference.positions().collect();
    let steps = s.num_steps()?;
    let horizon = s.ocp.horizon;
    let dt = s.ocp.dt;

    let mut log = SimLog {
        dt,
        records: Vec::with_capacity(steps + 1),
    };
    let mut x = s.initial_state;
    let mut u_prev = s.params.hover_input();
    let mut previous = None;

    for k in 0..=steps {
        let time = T::lit(k as f64) * dt;
        let abort = |log: SimLog<T>, reason: String| SimError::Aborted { time, reason, log };
        if !x.is_finite() {
            return Err(abort(log, "plant state is not finite".into()));
        }
        if x[THETA].abs() >= pitch_limit() {
            return Err(abort(log, format!("pitch {} exceeds the supported range", x[THETA])));
        }
        let prob = OcpProblem {
            x0: x,
            u_prev,
            refs: reference.window(k, horizon + 1),
            weights: s.weights,
            config: s.ocp,
            field: s.field.clone(),
            params: s.params,
        };
        let init = match (&previous, s.warm_start) {
            (Some(prev), true) => shift_warm_start(prev, &prob)?,
            _ => cold_start(&prob),
        };
        let result = match solve(&prob, &init, &s.solver) {
            Ok(r) if r.objective.is_finite() && r.decision.is_finite() => r,
            Ok(_) => return Err(abort(log, "solver returned a non-finite iterate".into())),
            Err(e) => return Err(abort(log, format!("solver failed: {e}"))),
        };
        let u = result.first_control();
        let pos = x.position();
        let ref_state = prob.refs[0].state;
        log.records.push(StepRecord {
            time,
            state: x,
            input: u,
            reference: ref_state,
            iterations: result.iterations,
            solve_time: result.wall_time,
            kkt_residual: result.kkt_residual,
            status: result.status,
            deviation: norm3(&pos, &ref_state.position()),
            closest_point_deviation: distance_to_polyline(&pos, &ref_positions),
            obstacle_distances: s.field.obstacles.iter().map(|o| distance(&pos, o)).collect(),
            obstacle_margins: s.field.obstacles.iter().map(|o| margin(&pos, o)).collect(),
        });
        if k < steps {
            x = plant_step(s, &x, &u);
            u_prev = u;
            previous = Some(result.decision);
        }
    }
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics<T> {
    pub average_deviation: T,
    pub maximum_deviation: T,
    pub avg_solver_iterations: T,
    /// Mean solve wall time, s.
    pub avg_convergence_time: T,
    pub thrust_min: T,
    pub thrust_max: T,
    pub total_time: T,
    /// First time the vehicle is, and stays, within the arrival radius of the
    /// final reference point. `None` if it never settles there.
    pub navigation_time: Option<T>,
    pub safety_margin_violation_fraction: T,
    pub hard_collision_count: usize,
}

pub fn compute_metrics<T: Real>(log: &SimLog<T>, s: &Scenario<T>) -> Result<Metrics<T>> {
    let records = &log.records;
    if records.is_empty() {
        return Err(Error::EmptyLog);
    }
    let count = T::lit(records.len() as f64);
    let average_deviation = records.iter().map(|r| r.deviation).sum::<T>() / count;
    let maximum_deviation = records.iter().fold(T::zero(), |m, r| m.max(r.deviation));
    let avg_solver_iterations = records.iter().map(|r| T::lit(r.iterations as f64)).sum::<T>() / count;
    let avg_convergence_time = records.iter().map(|r| T::lit(r.solve_time.as_secs_f64())).sum::<T>() / count;
    let thrust_min = records.iter().fold(T::infinity(), |m, r| m.min(r.input[THRUST]));
    let thrust_max = records.iter().fold(T::neg_infinity(), |m, r| m.max(r.input[THRUST]));

    let goal = s
        .reference()?
        .points
        .last()
        .map(|p| p.state.position())
        .ok_or(Error::EmptyLog)?;
    let mut settled_from = None;
    for (i, r) in records.iter().enumerate().rev() {
        if norm3(&r.state.position(), &goal) <= s.arrival_radius {
            settled_from = Some(i);
        } else {
            break;
        }
    }
    let navigation_time = settled_from.map(|i| records[i].time);

    let violations = records
        .iter()
        .filter(|r| r.obstacle_margins.iter().any(|m| *m < T::zero()))
        .count();
    let hard_collision_count = records
        .iter()
        .filter(|r| {
            r.obstacle_distances
                .iter()
                .zip(&s.field.obstacles)
                .any(|(d, o)| *d < o.radius)
        })
        .count();

    Ok(Metrics {
        average_deviation,
        maximum_deviation,
        avg_solver_iterations,
        avg_convergence_time,
        thrust_min,
        thrust_max,
        total_time: T::lit(log.records.len().saturating_sub(1) as f64) * log.dt,
        navigation_time,
        safety_margin_violation_fraction: T::lit(violations as f64) / count,
        hard_collision_count,
    })
}

/// Differences `b - a` for every metric plus the relative navigation-time change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunComparison<T> {
    pub navigation_time_increase_percent: T,
    pub navigation_time: T,
    pub average_deviation: T,
    pub maximum_deviation: T,
    pub avg_solver_iterations: T,
    pub avg_convergence_time: T,
    pub thrust_min: T,
    pub thrust_max: T,
    pub total_time: T,
    pub safety_margin_violation_fraction: T,
    pub hard_collision_count: i64,
}

pub fn compare_runs<T: Real>(a: &Metrics<T>, b: &Metrics<T>) -> Result<RunComparison<T>> {
    let base = match a.navigation_time {
        Some(t) if t > T::zero() => t,
        Some(t) => return Err(Error::InvalidBaseline(t.to_f64_lossy())),
        None => return Err(Error::InvalidBaseline(f64::NAN)),
    };
    let other = b
        .navigation_time
        .ok_or_else(|| invalid("navigation_time", "second run never reached its goal"))?;
    Ok(RunComparison {
        navigation_time_increase_percent: c::<T>(100.0) * (other - base) / base,
        navigation_time: other - base,
        average_deviation: b.average_deviation - a.average_deviation,
        maximum_deviation: b.maximum_deviation - a.maximum_deviation,
        avg_solver_iterations: b.avg_solver_iterations - a.avg_solver_iterations,
        avg_convergence_time: b.avg_convergence_time - a.avg_convergence_time,
        thrust_min: b.thrust_min - a.thrust_min,
        thrust_max: b.thrust_max - a.thrust_max,
        total_time: b.total_time - a.total_time,
        safety_margin_violation_fraction: b.safety_margin_violation_fraction - a.safety_margin_violation_fraction,
        hard_collision_count: b.hard_collision_count as i64 - a.hard_collision_count as i64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Z;

    fn record(t: f64, pos: [f64; 3], reference: [f64; 3], thrust: f64, iterations: usize) -> StepRecord<f64> {
        StepRecord {
            time: t,
            state: StateVec::at_rest(pos),
            input: ControlVec::new(thrust, 0.0, 0.0, 0.0),
            reference: StateVec::at_rest(reference),
            iterations,
            solve_time: Duration::from_millis(10),
            kkt_residual: 0.0,
            status: SolveStatus::Converged,
            deviation: norm3(&pos, &reference),
            closest_point_deviation: 0.0,
            obstacle_distances: vec![],
            obstacle_margins: vec![],
        }
    }

    fn line_scenario() -> Scenario<f64> {
        let mut s = Scenario::with_defaults("line", vec![[0.0, 0.0, 1.0], [1.0, 0.0, 1.0]]);
        s.spline_degree = 1;
        s.traversal_duration = 0.1;
        s.sim_duration = 0.1;
        s.ocp.dt = 0.05;
        s
    }

    #[test]
    fn metrics_by_hand() {
        let s = line_scenario();
        let log = SimLog {
            dt: 0.05,
            records: vec![
                record(0.0, [0.0, 0.0, 1.0], [0.0, 0.0, 1.0], 36.0, 1),
                record(0.05, [0.5, 0.3, 1.0], [0.5, 0.0, 1.0], 38.0, 2),
                record(0.1, [0.9, 0.0, 1.0], [1.0, 0.0, 1.0], 37.0, 6),
            ],
        };
        let m = compute_metrics(&log, &s).unwrap();
        assert!((m.average_deviation - 0.4 / 3.0).abs() < 1e-12);
        assert!((m.maximum_deviation - 0.3).abs() < 1e-12);
        assert!((m.avg_solver_iterations - 3.0).abs() < 1e-12);
        assert!((m.avg_convergence_time - 0.01).abs() < 1e-12);
        assert_eq!((m.thrust_min, m.thrust_max), (36.0, 38.0));
        assert_eq!(m.navigation_time, Some(0.1));
        assert!((m.total_time - 0.1).abs() < 1e-12);
        assert_eq!(m.hard_collision_count, 0);
    }

    #[test]
    fn constant_offset_and_perfect_tracking() {
        let s = line_scenario();
        let recs = (0..3)
            .map(|i| record(i as f64 * 0.05, [0.0, 1.0, 1.0], [0.0, 0.0, 1.0], 37.0, 1))
            .collect();
        let m = compute_metrics(
            &SimLog {
                dt: 0.05,
                records: recs,
            },
            &s,
        )
        .unwrap();
        assert!((m.average_deviation - 1.0).abs() < 1e-12 && (m.maximum_deviation - 1.0).abs() < 1e-12);
        assert_eq!(m.navigation_time, None);
        let recs = (0..3)
            .map(|i| record(i as f64 * 0.05, [1.0, 0.0, 1.0], [1.0, 0.0, 1.0], 37.0, 1))
            .collect();
        let m = compute_metrics(
            &SimLog {
                dt: 0.05,
                records: recs,
            },
            &s,
        )
        .unwrap();
        assert_eq!(m.average_deviation, 0.0);
        assert_eq!(m.navigation_time, Some(0.0));
        assert!(compute_metrics(
            &SimLog {
                dt: 0.05,
                records: vec![]
            },
            &s
        )
        .is_err());
    }

    fn metrics_with_nav(t: Option<f64>) -> Metrics<f64> {
        Metrics {
            average_deviation: 0.2,
            maximum_deviation: 1.0,
            avg_solver_iterations: 2.0,
            avg_convergence_time: 0.01,
            thrust_min: 36.0,
            thrust_max: 38.0,
            total_time: 30.0,
            navigation_time: t,
            safety_margin_violation_fraction: 0.0,
            hard_collision_count: 0,
        }
    }

    #[test]
    fn comparison() {
        let a = metrics_with_nav(Some(44.5));
        let b = metrics_with_nav(Some(56.78));
        let cmp = compare_runs(&a, &b).unwrap();
        assert!((cmp.navigation_time_increase_percent - 27.60).abs() < 0.005);
        let cmp = compare_runs(&metrics_with_nav(Some(10.0)), &metrics_with_nav(Some(15.0))).unwrap();
        assert!((cmp.navigation_time_increase_percent - 50.0).abs() < 1e-12);
        let same = compare_runs(&a, &a).unwrap();
        assert_eq!(same.navigation_time_increase_percent, 0.0);
        assert_eq!(same.average_deviation, 0.0);
        assert_eq!(same.hard_collision_count, 0);
        assert!(compare_runs(&metrics_with_nav(Some(0.0)), &b).is_err());
        assert!(compare_runs(&metrics_with_nav(None), &b).is_err());
    }

    #[test]
    fn scenario_validation() {
        let mut s = line_scenario();
        assert!(s.validate().is_ok());
        s.sim_duration = 0.12;
        assert!(s.validate().is_err());
        let mut s = line_scenario();
        s.arrival_radius = 0.0;
        assert!(s.validate().is_err());
        let mut s = line_scenario();
        s.sim_duration = 0.05;
        assert!(s.validate().is_err());
    }

    #[test]
    fn hover_run_stays_put() {
        let mut s = Scenario::<f64>::with_defaults("hover", vec![[0.0, 0.0, 1.5], [0.0, 0.0, 1.5]]);
        s.spline_degree = 1;
        s.traversal_duration = 1.0;
        s.sim_duration = 2.0;
        let log = run_closed_loop(&s).unwrap();
        assert_eq!(log.records.len(), 41);
        for r in &log.records {
            assert!(r.deviation < 1e-9);
            assert!((r.state[Z] - 1.5).abs() < 1e-9);
        }
    }

    #[test]
    fn pitch_breach_aborts_with_partial_log() {
        // a very fast reference pulls the pitch reference to its (widened) bound
        let mut s = Scenario::with_defaults("tilt", vec![[0.0, 0.0, 1.5], [100.0, 0.0, 1.5]]);
        s.spline_degree = 1;
        s.traversal_duration = 1.0;
        s.sim_duration = 1.0;
        s.ocp.u_min[2] = -1.55;
        s.ocp.u_max[2] = 1.55;
        s.weights.q[THETA] = 0.0;
        s.weights.q_f[THETA] = 0.0;
        s.initial_state[THETA] = 1.45;
        match run_closed_loop(&s) {
            Err(SimError::Aborted { log, reason, .. }) => {
                assert!(reason.contains("pitch"), "{reason}");
                assert!(!log.records.is_empty() && log.records.len() < 21);
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }
}
