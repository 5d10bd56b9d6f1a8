#![allow(dead_code)]

use quadnmpc::model::{ControlVec, StateVec, NU, NX};
use quadnmpc::ocp::{Decision, OcpProblem};
use quadnmpc::sim::Scenario;
use quadnmpc::solver::cold_start;
use rand::rngs::StdRng;
use rand::Rng;

/// Problem seen by the controller at step `k` of a scenario, with `x0` on the reference.
pub fn problem_at(s: &Scenario<f64>, k: usize) -> OcpProblem<f64> {
    let reference = s.reference().unwrap();
    let refs = reference.window(k, s.ocp.horizon + 1);
    OcpProblem {
        x0: refs[0].state,
        u_prev: s.params.hover_input(),
        refs,
        weights: s.weights,
        config: s.ocp,
        field: s.field.clone(),
        params: s.params,
    }
}

/// Cold start with every variable jittered, inputs kept inside the bounds.
pub fn jittered(prob: &OcpProblem<f64>, rng: &mut StdRng, scale: f64) -> Decision<f64> {
    let mut d = cold_start(prob);
    let (lo, hi) = (prob.config.u_min, prob.config.u_max);
    for x in &mut d.states {
        *x = StateVec::from_fn(|i| x[i] + scale * rng.gen_range(-1.0..1.0) * if i < 3 { 0.3 } else { 0.1 });
    }
    for u in &mut d.controls {
        *u = ControlVec::from_fn(|i| {
            let span = hi[i] - lo[i];
            (u[i] + scale * 0.05 * span * rng.gen_range(-1.0..1.0)).clamp(lo[i], hi[i])
        });
    }
    d
}

pub fn flat_len(horizon: usize) -> usize {
    horizon * (NX + NU)
}
