use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use quadnmpc::sim::{compare_runs, compute_metrics, run_closed_loop, SimError};
use quadnmpc_cli::output::{
    comparison_report, fmt_sig9, trajectory_csv, write_atomic, MetricsFile, METRICS_FILE, SCENARIO_FILE,
    TRAJECTORY_FILE,
};
use quadnmpc_cli::scenario::{self, Override};

/// Quadrotor NMPC scenario runner.
#[derive(Parser)]
#[command(name = "nmpc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate scenarios and write trajectory.csv, metrics.json and scenario.json.
    Run {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        /// Output directory; with several scenarios each gets a subdirectory named after its file.
        #[arg(short, long, default_value = "out")]
        output_dir: PathBuf,
        /// Override a scenario field, e.g. `--set ocp.horizon=10`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<Override>,
        /// Scenarios simulated concurrently.
        #[arg(short, long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
        jobs: u16,
        /// Write measured solve times to the CSV instead of zeros (makes the file nondeterministic).
        #[arg(long)]
        record_wall_time: bool,
    },
    /// Print metric deltas of run B against baseline run A.
    Compare { baseline: PathBuf, other: PathBuf },
    /// Print the sampled reference path as t,x,y,z CSV.
    Path {
        scenario: PathBuf,
        /// Evenly spaced samples over the traversal, endpoints included
        #[arg(short = 'n', long, default_value_t = 101)]
        samples: usize,
        /// Override a scenario field
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<Override>,
    },
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

const INVALID: u8 = 1;
const ABORTED: u8 = 2;

fn invalid(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: INVALID,
        error: error.into(),
    }
}

fn run_one(path: &Path, out: &Path, overrides: &[Override], wall_time: bool) -> Result<String, Failure> {
    let file = scenario::load(path, overrides).map_err(invalid)?;
    let s = file.to_scenario();
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(invalid)?;
    let write = |name: &str, body: &[u8]| {
        write_atomic(&out.join(name), body).with_context(|| format!("writing {}", out.join(name).display()))
    };
    let log = match run_closed_loop(&s) {
        Ok(log) => log,
        Err(SimError::Aborted { time, reason, log }) => {
            let csv = trajectory_csv(&log, s.field.obstacles.len(), wall_time);
            write(TRAJECTORY_FILE, csv.as_bytes()).map_err(invalid)?;
            return Err(Failure {
                code: ABORTED,
                error: anyhow!(
                    "{}: aborted at t = {}: {reason} (partial trajectory kept)",
                    s.name,
                    fmt_sig9(time)
                ),
            });
        }
        Err(SimError::Invalid(e)) => return Err(invalid(anyhow!("{}: {e}", path.display()))),
    };
    let metrics = compute_metrics(&log, &s).map_err(invalid)?;
    let echo = serde_json::to_string_pretty(&file).map_err(invalid)? + "\n";
    let report = serde_json::to_string_pretty(&MetricsFile::new(&s.name, &metrics)).map_err(invalid)? + "\n";
    write(
        TRAJECTORY_FILE,
        trajectory_csv(&log, s.field.obstacles.len(), wall_time).as_bytes(),
    )
    .map_err(invalid)?;
    write(METRICS_FILE, report.as_bytes()).map_err(invalid)?;
    write(SCENARIO_FILE, echo.as_bytes()).map_err(invalid)?;
    let nav = metrics
        .navigation_time
        .map_or("never".to_owned(), |t| format!("{} s", fmt_sig9(t)));
    Ok(format!(
        "{}: avg deviation {} m, max {} m, avg iterations {}, navigation {nav}, collisions {} -> {}",
        s.name,
        fmt_sig9(metrics.average_deviation),
        fmt_sig9(metrics.maximum_deviation),
        fmt_sig9(metrics.avg_solver_iterations),
        metrics.hard_collision_count,
        out.display()
    ))
}

fn output_dirs(scenarios: &[PathBuf], root: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if scenarios.len() == 1 {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = Vec::new();
    for p in scenarios {
        let stem = p.file_stem().ok_or_else(|| anyhow!("{}: no file name", p.display()))?;
        let dir = root.join(stem);
        if dirs.contains(&dir) {
            bail!("two scenarios share the output directory {}", dir.display());
        }
        dirs.push(dir);
    }
    Ok(dirs)
}

fn run(scenarios: &[PathBuf], root: &Path, overrides: &[Override], jobs: usize, wall_time: bool) -> u8 {
    let dirs = match output_dirs(scenarios, root) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e:#}");
            return INVALID;
        }
    };
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<String, Failure>>>> = Mutex::new((0..scenarios.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(scenarios.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= scenarios.len() {
                    break;
                }
                let r = run_one(&scenarios[i], &dirs[i], overrides, wall_time);
                results.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    let mut code = 0;
    for r in results.into_inner().expect("no poisoned workers").into_iter().flatten() {
        match r {
            Ok(summary) => println!("{summary}"),
            Err(f) => {
                eprintln!("error: {:#}", f.error);
                code = code.max(f.code);
            }
        }
    }
    code
}

fn compare(a: &Path, b: &Path) -> Result<(), Failure> {
    let read = |p: &Path| -> anyhow::Result<MetricsFile> {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
    };
    let (ma, mb) = (read(a).map_err(invalid)?, read(b).map_err(invalid)?);
    let c = compare_runs(&ma.metrics(), &mb.metrics()).map_err(invalid)?;
    print!("{}", comparison_report(&c));
    Ok(())
}

fn path(scenario_path: &Path, samples: usize, overrides: &[Override]) -> Result<(), Failure> {
    if samples < 2 {
        return Err(invalid(anyhow!("--samples must be at least 2, got {samples}")));
    }
    let s = scenario::load(scenario_path, overrides).map_err(invalid)?.to_scenario();
    let spline = s.path().map_err(invalid)?;
    let (lo, hi) = spline.parameter_range();
    let mut out = String::from("t,x,y,z\n");
    for j in 0..samples {
        let frac = j as f64 / (samples - 1) as f64;
        let p = spline.eval(lo + (hi - lo) * frac).map_err(invalid)?;
        let row = [frac * s.traversal_duration, p[0], p[1], p[2]].map(fmt_sig9);
        out.push_str(&row.join(","));
        out.push('\n');
    }
    print!("{out}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenarios,
            output_dir,
            overrides,
            jobs,
            record_wall_time,
        } => {
            return ExitCode::from(run(
                &scenarios,
                &output_dir,
                &overrides,
                jobs as usize,
                record_wall_time,
            ));
        }
        Command::Compare { baseline, other } => compare(&baseline, &other),
        Command::Path {
            scenario,
            samples,
            overrides,
        } => path(&scenario, samples, &overrides),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
