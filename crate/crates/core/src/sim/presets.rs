//! Shipped scenarios.

use super::Scenario;
use crate::obstacle::Obstacle;
use crate::scalar::{c, Real};

fn p<T: Real>(x: f64, y: f64, z: f64) -> [T; 3] {
    [c(x), c(y), c(z)]
}

/// Closed hexagon of circumradius 4 m at 1.5 m altitude, traversed in 27.5 s.
pub fn hexagon<T: Real>() -> Scenario<T> {
    let h = 2.0 * 3f64.sqrt();
    let mut waypoints: Vec<[T; 3]> = [(4.0, 0.0), (2.0, h), (-2.0, h), (-4.0, 0.0), (-2.0, -h), (2.0, -h)]
        .iter()
        .map(|&(x, y)| p(x, y, 1.5))
        .collect();
    waypoints.push(waypoints[0]);
    let mut s = Scenario::with_defaults("hexagon", waypoints);
    s.traversal_duration = c(27.5);
    s.sim_duration = c(30.0);
    s
}

/// Mostly straight course past three spheres that sit on the path.
///
/// Shares path, timing and weights with [`multi_obstacle_free`].
pub fn multi_obstacle<T: Real>() -> Scenario<T> {
    let mut s = multi_obstacle_free::<T>();
    s.name = "multi_obstacle".into();
    s.field.obstacles = vec![
        Obstacle {
            center: p(3.6, 0.15, 1.5),
            radius: c(0.5),
            safety: c(0.5),
        },
        Obstacle {
            center: p(7.5, -0.15, 1.5),
            radius: c(0.5),
            safety: c(0.5),
        },
        Obstacle {
            center: p(11.4, 0.15, 1.5),
            radius: c(0.5),
            safety: c(0.5),
        },
    ];
    s
}

/// Same course as [`multi_obstacle`] with the obstacles removed.
pub fn multi_obstacle_free<T: Real>() -> Scenario<T> {
    let waypoints = vec![
        p(0.0, 0.0, 1.5),
        p(3.0, 0.0, 1.5),
        p(6.0, 0.4, 1.5),
        p(9.0, -0.4, 1.5),
        p(12.0, 0.0, 1.5),
        p(15.0, 0.0, 1.5),
    ];
    let mut s = Scenario::with_defaults("multi_obstacle_free", waypoints);
    s.traversal_duration = c(22.5);
    s.sim_duration = c(28.5);
    // velocity tracking dominates, so a detour costs time instead of being
    // clawed back by a sprint toward the reference position
    let q = [1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 10.0, 10.0, 10.0, 1.0].map(c::<T>);
    s.weights.q = q;
    s.weights.q_f = q.map(|v| v * c(2.0));
    s
}

/// Straight 10 m line at 1.5 m altitude.
pub fn straight_line<T: Real>() -> Scenario<T> {
    let mut s = Scenario::with_defaults("straight_line", vec![p(0.0, 0.0, 1.5), p(10.0, 0.0, 1.5)]);
    s.spline_degree = 1;
    s.traversal_duration = c(20.0);
    s.sim_duration = c(22.0);
    s
}

/// Hold position for 10 s.
pub fn hover<T: Real>() -> Scenario<T> {
    let mut s = Scenario::with_defaults("hover", vec![p(0.0, 0.0, 1.5), p(0.0, 0.0, 1.5)]);
    s.spline_degree = 1;
    s.traversal_duration = c(10.0);
    s.sim_duration = c(10.0);
    s
}

pub fn by_name<T: Real>(name: &str) -> Option<Scenario<T>> {
    match name {
        "hexagon" => Some(hexagon()),
        "multi_obstacle" => Some(multi_obstacle()),
        "multi_obstacle_free" => Some(multi_obstacle_free()),
        "straight_line" => Some(straight_line()),
        "hover" => Some(hover()),
        _ => None,
    }
}
