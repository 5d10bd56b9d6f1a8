//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use quadnmpc::model::{step_euler, step_rk4, ControlVec, ModelParams, StateVec, NU, NX, PHI};
use quadnmpc::obstacle::{potential, potential_gradient, Obstacle};
use quadnmpc::ocp::{linearize_step, objective_gradient, total_objective, Decision, OcpProblem};
use quadnmpc::path::{basis, BSplinePath};
use quadnmpc::sim::{compare_runs, compute_metrics, presets, run_closed_loop, Metrics, SimLog};
use quadnmpc::solver::{cold_start, solve, SolverConfig};
use quadnmpc::Scenario64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn problem_at(s: &Scenario64, k: usize) -> OcpProblem<f64> {
    let refs = s.reference().unwrap().window(k, s.ocp.horizon + 1);
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

fn jittered(prob: &OcpProblem<f64>, rng: &mut StdRng) -> Decision<f64> {
    let mut d = cold_start(prob);
    let (lo, hi) = (prob.config.u_min, prob.config.u_max);
    for x in &mut d.states {
        *x = StateVec::from_fn(|i| x[i] + rng.gen_range(-1.0..1.0) * if i < 3 { 0.3 } else { 0.1 });
    }
    for u in &mut d.controls {
        *u = ControlVec::from_fn(|i| (u[i] + 0.05 * (hi[i] - lo[i]) * rng.gen_range(-1.0..1.0)).clamp(lo[i], hi[i]));
    }
    d
}

fn relative(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn gradients() -> Outcome {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(1);
    let mut worst_grad: f64 = 0.0;
    let mut touched = 0;
    // multi-obstacle windows 60 and 140 run through the first and second sphere
    let cases = [
        (presets::hexagon::<f64>(), 40),
        (presets::multi_obstacle::<f64>(), 60),
        (presets::multi_obstacle::<f64>(), 140),
    ];
    let mut coords = 0;
    for (i, (s, k)) in cases.iter().enumerate() {
        let prob = problem_at(s, *k);
        let d = jittered(&prob, &mut rng);
        touched += d
            .states
            .iter()
            .filter(|x| prob.obstacle_cost(&x.position()) > 0.0)
            .count();
        let n = prob.horizon();
        let g = objective_gradient(&d, &prob).unwrap().to_flat();
        let v = d.to_flat();
        let f = |v: &[f64]| total_objective(&Decision::from_flat(n, v).unwrap(), &prob).unwrap();
        let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let count = if i == 0 { 100 } else { 50 };
        for _ in 0..count {
            let j = rng.gen_range(0..v.len());
            let h = 1e-5 * v[j].abs().max(1.0);
            let (mut a, mut b) = (v.clone(), v.clone());
            a[j] += h;
            b[j] -= h;
            // normwise: entry error against the largest gradient entry
            worst_grad = worst_grad.max((g[j] - (f(&a) - f(&b)) / (2.0 * h)).abs() / scale);
            coords += 1;
        }
    }
    let mut worst_jac: f64 = 0.0;
    let p = ModelParams::<f64>::default();
    let dt = 0.05;
    for _ in 0..100 {
        let x = StateVec::from_fn(|i| {
            if (3..=5).contains(&i) {
                rng.gen_range(-0.6..0.6)
            } else {
                rng.gen_range(-5.0..5.0)
            }
        });
        let u = ControlVec::new(
            rng.gen_range(5.0..60.0),
            rng.gen_range(-0.35..0.35),
            rng.gen_range(-0.35..0.35),
            rng.gen_range(-1.0..1.0),
        );
        let (a, b) = linearize_step(&x, &u, &p, dt);
        let step = |x: &StateVec<f64>, u: &ControlVec<f64>| step_euler(x, u, &p, dt).unwrap();
        for j in 0..NX {
            let h = 1e-5 * x[j].abs().max(1.0);
            let (mut xp, mut xm) = (x, x);
            xp[j] += h;
            xm[j] -= h;
            let (fp, fm) = (step(&xp, &u), step(&xm, &u));
            for i in 0..NX {
                worst_jac = worst_jac.max(relative(a[i][j], (fp[i] - fm[i]) / (2.0 * h)));
            }
        }
        for j in 0..NU {
            let h = 1e-5 * u[j].abs().max(1.0);
            let (mut up, mut um) = (u, u);
            up[j] += h;
            um[j] -= h;
            let (fp, fm) = (step(&x, &up), step(&x, &um));
            for i in 0..NX {
                worst_jac = worst_jac.max(relative(b[i][j], (fp[i] - fm[i]) / (2.0 * h)));
            }
        }
    }
    let elapsed = started.elapsed();
    check(
        worst_grad <= 1e-6 && worst_jac <= 1e-6 && touched > 0 && elapsed < Duration::from_secs(10),
        format!(
            "{coords} gradient coordinates, worst rel err {worst_grad:.2e}; 100 Jacobian points, worst {worst_jac:.2e}; {touched} nodes inside a safety sphere; {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn hover() -> Outcome {
    let started = Instant::now();
    let s = presets::hover::<f64>();
    let prob = problem_at(&s, 0);
    let r = solve(&prob, &cold_start(&prob), &SolverConfig::default()).map_err(|e| e.to_string())?;
    let u = r.first_control();
    let thrust_err = (u[0] - s.params.mass * s.params.gravity).abs();
    let angle_err = (1..4).map(|i| u[i].abs()).fold(0.0, f64::max);
    let elapsed = started.elapsed();
    check(
        thrust_err <= 1e-6 && angle_err <= 1e-8 && r.iterations <= 1 && elapsed < Duration::from_secs(1),
        format!(
            "{} iterations, thrust err {thrust_err:.1e} N, angle err {angle_err:.1e}, {:.3} s",
            r.iterations,
            elapsed.as_secs_f64()
        ),
    )
}

fn integrator_orders() -> Outcome {
    type Step = fn(&StateVec<f64>, &ControlVec<f64>, &ModelParams<f64>, f64) -> quadnmpc::Result<StateVec<f64>>;
    let p = ModelParams::<f64>::default();
    let u = ControlVec::new(p.hover_thrust(), 0.2, 0.0, 0.0);
    let rate = p.k_phi / p.tau_phi;
    let t_end = 1.0;
    let exact = 0.2 * (1.0 - (-rate * t_end).exp());
    let err = |step: Step, dt: f64| {
        let n = (t_end / dt).round() as usize;
        let x = (0..n).fold(StateVec::zeros(), |x, _| step(&x, &u, &p, dt).unwrap());
        (x[PHI] - exact).abs()
    };
    let euler = err(step_euler, 0.01) / err(step_euler, 0.005);
    let rk4 = err(step_rk4, 0.1) / err(step_rk4, 0.05);
    check(
        (1.8..=2.2).contains(&euler) && rk4 >= 15.0,
        format!("euler ratio {euler:.3}, rk4 ratio {rk4:.2}"),
    )
}

fn bspline() -> Outcome {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(4);
    let (mut pou, mut ends): (f64, f64) = (0.0, 0.0);
    let mut support_violations = 0;
    for _ in 0..1000 {
        let p = rng.gen_range(1..=3);
        let n = rng.gen_range(p + 1..=12);
        let span = rng.gen_range(0.5..4.0);
        let mut interior: Vec<f64> = (0..n - p - 1).map(|_| rng.gen_range(0.0..span)).collect();
        interior.sort_by(f64::total_cmp);
        let mut knots = vec![0.0; p + 1];
        knots.extend(interior);
        knots.extend(std::iter::repeat_n(span, p + 1));
        let ctrl: Vec<[f64; 3]> = (0..n).map(|_| [0; 3].map(|_| rng.gen_range(-10.0..10.0))).collect();
        let t = rng.gen_range(0.0..span);
        let mut sum = 0.0;
        for i in 0..n {
            let b = basis(i, p, t, &knots).unwrap();
            if (t < knots[i] || t > knots[i + p + 1]) && b != 0.0 {
                support_violations += 1;
            }
            sum += b;
        }
        pou = pou.max((sum - 1.0).abs());
        let path = BSplinePath::new(p, ctrl.clone(), knots).unwrap();
        let (a, b) = (path.eval(0.0).unwrap(), path.eval(span).unwrap());
        for c in 0..3 {
            ends = ends.max((a[c] - ctrl[0][c]).abs()).max((b[c] - ctrl[n - 1][c]).abs());
        }
    }
    let elapsed = started.elapsed();
    check(
        pou <= 1e-12 && ends <= 1e-12 && support_violations == 0 && elapsed < Duration::from_secs(5),
        format!(
            "1000 splines: partition err {pou:.1e}, endpoint err {ends:.1e}, {support_violations} support violations, {:.3} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn obstacle_potential() -> Outcome {
    let mut rng = StdRng::seed_from_u64(5);
    let (mut outside_nonzero, mut worst_boundary_grad, mut worst_fd): (usize, f64, f64) = (0, 0.0, 0.0);
    let mut inside_shrinks = true;
    for _ in 0..1000 {
        let o = Obstacle::new(
            [0; 3].map(|_| rng.gen_range(-20.0..20.0)),
            rng.gen_range(0.1..3.0),
            rng.gen_range(0.0..2.0),
        )
        .unwrap();
        let eta = rng.gen_range(0.1..100.0);
        let mut dir = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
        let n = dir.iter().map(|x: &f64| x * x).sum::<f64>().sqrt().max(1e-3);
        dir = dir.map(|x| x / n);
        let at = |d: f64| [0, 1, 2].map(|i| o.center[i] + d * dir[i]);
        let norm = |g: [f64; 3]| g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rho = o.influence_radius();

        let far = at(rho + 1e-9 + rng.gen_range(0.0..10.0));
        if potential(&far, &o, eta) != 0.0 || potential_gradient(&far, &o, eta) != [0.0; 3] {
            outside_nonzero += 1;
        }
        let rim = at(rho + rng.gen_range(0.0..1e-6));
        worst_boundary_grad = worst_boundary_grad.max(norm(potential_gradient(&rim, &o, eta)));
        let (near, nearer) = (
            norm(potential_gradient(&at(rho - 1e-6), &o, eta)),
            norm(potential_gradient(&at(rho - 1e-9), &o, eta)),
        );
        inside_shrinks &= nearer <= 2e-3 * near + 1e-12;

        let pos = at(rng.gen_range(0.05..0.99) * rho);
        let g = potential_gradient(&pos, &o, eta);
        let scale = g.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let h = 1e-6 * (0..3).map(|i| (pos[i] - o.center[i]).powi(2)).sum::<f64>().sqrt();
        for i in 0..3 {
            let (mut a, mut b) = (pos, pos);
            a[i] += h;
            b[i] -= h;
            let fd = (potential(&a, &o, eta) - potential(&b, &o, eta)) / (2.0 * h);
            worst_fd = worst_fd.max((g[i] - fd).abs() / scale);
        }
    }
    check(
        outside_nonzero == 0 && worst_boundary_grad < 1e-6 && inside_shrinks && worst_fd <= 1e-6,
        format!(
            "1000 spheres: {outside_nonzero} nonzero outside, max |grad| within 1e-6 m outside {worst_boundary_grad:.1e}, vanishing from inside {inside_shrinks}, worst FD rel err {worst_fd:.1e}"
        ),
    )
}

struct Run {
    log: SimLog<f64>,
    metrics: Metrics<f64>,
    wall: Duration,
}

fn simulate(s: &Scenario64) -> Result<Run, String> {
    let started = Instant::now();
    let log = run_closed_loop(s).map_err(|e| format!("{}: {e}", s.name))?;
    let wall = started.elapsed();
    let metrics = compute_metrics(&log, s).map_err(|e| e.to_string())?;
    Ok(Run { log, metrics, wall })
}

fn hexagon_run(hex: &Run) -> Outcome {
    let slowest = hex.log.records.iter().map(|r| r.solve_time).max().unwrap_or_default();
    let m = &hex.metrics;
    check(
        m.average_deviation <= 0.35
            && m.hard_collision_count == 0
            && slowest < Duration::from_millis(50)
            && hex.wall < Duration::from_secs(60),
        format!(
            "avg deviation {:.4} m, {} collisions, slowest solve {:.1} ms, run {:.2} s",
            m.average_deviation,
            m.hard_collision_count,
            slowest.as_secs_f64() * 1e3,
            hex.wall.as_secs_f64()
        ),
    )
}

fn obstacle_trend(free: &Run, obst: &Run) -> Outcome {
    let (a, b) = (&free.metrics, &obst.metrics);
    let cmp = compare_runs(a, b).map_err(|e| e.to_string())?;
    check(
        b.avg_solver_iterations > a.avg_solver_iterations
            && cmp.navigation_time_increase_percent > 0.0
            && b.hard_collision_count == 0
            && b.safety_margin_violation_fraction.is_finite(),
        format!(
            "avg iterations {:.2} -> {:.2}, navigation {:.2} s -> {:.2} s ({:+.1} %), {} collisions, margin violation fraction {:.3}",
            a.avg_solver_iterations,
            b.avg_solver_iterations,
            a.navigation_time.unwrap_or(f64::NAN),
            b.navigation_time.unwrap_or(f64::NAN),
            cmp.navigation_time_increase_percent,
            b.hard_collision_count,
            b.safety_margin_violation_fraction
        ),
    )
}

fn warm_start(hex: &Run) -> Outcome {
    let mut s = presets::hexagon::<f64>();
    s.warm_start = false;
    let cold = simulate(&s)?;
    let (w, c) = (hex.metrics.avg_solver_iterations, cold.metrics.avg_solver_iterations);
    check(w <= c, format!("mean iterations warm {w:.2}, cold {c:.2}"))
}

fn horizon(long: &Run) -> Outcome {
    let mut s = presets::multi_obstacle::<f64>();
    s.ocp.horizon = 10;
    let short = simulate(&s)?;
    let (a, b) = (short.metrics.maximum_deviation, long.metrics.maximum_deviation);
    check(a > b, format!("max deviation N=10 {a:.3} m, N=30 {b:.3} m"))
}

fn determinism() -> Outcome {
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/hexagon.json");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = vec![];
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_nmpc"))
            .arg("run")
            .arg(&scenario)
            .arg("-o")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        files.push(std::fs::read(out.join("trajectory.csv")).map_err(|e| e.to_string())?);
    }
    check(
        files[0] == files[1] && !files[0].is_empty(),
        format!(
            "two hexagon runs, {} bytes each, identical {}",
            files[0].len(),
            files[0] == files[1]
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, outcome: Outcome| match outcome {
        Ok(d) => println!("criterion {n}: PASS ({d})"),
        Err(d) => {
            failed += 1;
            println!("criterion {n}: FAIL ({d})");
        }
    };
    report(1, gradients());
    report(2, hover());
    report(3, integrator_orders());
    report(4, bspline());
    report(5, obstacle_potential());

    let hex = simulate(&presets::hexagon());
    let free = simulate(&presets::multi_obstacle_free());
    let obst = simulate(&presets::multi_obstacle());
    let with = |r: &Result<Run, String>, f: &dyn Fn(&Run) -> Outcome| r.as_ref().map_err(Clone::clone).and_then(f);
    report(6, with(&hex, &hexagon_run));
    report(
        7,
        match (&free, &obst) {
            (Ok(a), Ok(b)) => obstacle_trend(a, b),
            (Err(e), _) | (_, Err(e)) => Err(e.clone()),
        },
    );
    report(8, with(&hex, &warm_start));
    report(9, with(&obst, &horizon));
    report(10, determinism());

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
