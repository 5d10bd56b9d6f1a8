//! Nonlinear model predictive control for quadrotors.
//!
//! The controller tracks a clamped B-spline reference while a repulsive
//! potential keeps it clear of spherical obstacles. Each control step solves a
//! multiple-shooting optimal control problem with a warm-started Gauss-Newton
//! SQP; [`sim`] closes the loop and computes tracking metrics.
//!
//! All numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

// `!(a > b)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
mod linalg;
pub mod model;
pub mod obstacle;
pub mod ocp;
pub mod path;
pub mod qp;
pub mod scalar;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use model::{ControlVec, ModelParams, StateVec};
pub use obstacle::{Obstacle, ObstacleField};
pub use ocp::{Decision, ObstacleMode, OcpConfig, OcpProblem, Weights};
pub use path::{BSplinePath, ReferencePoint, ReferenceTrajectory};
pub use scalar::Real;
pub use sim::{Metrics, PlantIntegrator, RunComparison, Scenario, SimLog};
pub use solver::{SolveResult, SolveStatus, SolverConfig};

pub type StateVec64 = StateVec<f64>;
pub type ControlVec64 = ControlVec<f64>;
pub type ModelParams64 = ModelParams<f64>;
pub type BSplinePath64 = BSplinePath<f64>;
pub type Obstacle64 = Obstacle<f64>;
pub type ObstacleField64 = ObstacleField<f64>;
pub type Weights64 = Weights<f64>;
pub type OcpConfig64 = OcpConfig<f64>;
pub type OcpProblem64 = OcpProblem<f64>;
pub type Decision64 = Decision<f64>;
pub type SolverConfig64 = SolverConfig<f64>;
pub type SolveResult64 = SolveResult<f64>;
pub type Scenario64 = Scenario<f64>;
pub type SimLog64 = SimLog<f64>;
pub type Metrics64 = Metrics<f64>;

pub type StateVec32 = StateVec<f32>;
pub type ControlVec32 = ControlVec<f32>;
pub type ModelParams32 = ModelParams<f32>;
pub type BSplinePath32 = BSplinePath<f32>;
pub type Scenario32 = Scenario<f32>;
