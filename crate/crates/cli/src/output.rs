//! Run artifacts: trajectory CSV, metrics report and the resolved scenario.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use quadnmpc::sim::{Metrics, RunComparison, SimLog};
use serde::{Deserialize, Serialize};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const SCENARIO_FILE: &str = "scenario.json";

const STATE_COLUMNS: [&str; 10] = ["x", "y", "z", "phi", "theta", "psi", "vx", "vy", "vz", "psi_dot"];
const INPUT_COLUMNS: [&str; 4] = ["thrust", "phi_r", "theta_r", "psi_dot_r"];

/// `v` rounded to 9 significant digits, printed in its shortest exact form
/// (exponent notation for very large or small magnitudes).
pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string().to_lowercase();
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    format!("{rounded:?}")
}

pub fn csv_header(obstacles: usize) -> String {
    let mut cols = vec!["t".to_owned()];
    cols.extend(STATE_COLUMNS.iter().map(|c| c.to_string()));
    cols.extend(INPUT_COLUMNS.iter().map(|c| c.to_string()));
    cols.extend(STATE_COLUMNS.iter().map(|c| format!("ref_{c}")));
    cols.extend(["deviation", "iterations", "solve_time", "kkt_residual"].map(String::from));
    cols.extend((0..obstacles).map(|i| format!("margin_{i}")));
    cols.join(",")
}

/// One header line plus one row per record. `solve_time` is written as 0
/// unless `wall_time` is set, so reruns produce identical files.
pub fn trajectory_csv(log: &SimLog<f64>, obstacles: usize, wall_time: bool) -> String {
    let mut out = csv_header(obstacles);
    out.push('\n');
    for r in &log.records {
        let mut row: Vec<String> = vec![fmt_sig9(r.time)];
        row.extend(r.state.0.iter().map(|v| fmt_sig9(*v)));
        row.extend(r.input.0.iter().map(|v| fmt_sig9(*v)));
        row.extend(r.reference.0.iter().map(|v| fmt_sig9(*v)));
        row.push(fmt_sig9(r.deviation));
        row.push(r.iterations.to_string());
        row.push(if wall_time {
            fmt_sig9(r.solve_time.as_secs_f64())
        } else {
            "0".into()
        });
        row.push(fmt_sig9(r.kkt_residual));
        row.extend(r.obstacle_margins.iter().map(|v| fmt_sig9(*v)));
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

/// Serialised form of [`Metrics`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsFile {
    #[serde(default)]
    pub scenario: String,
    pub average_deviation: f64,
    pub maximum_deviation: f64,
    pub avg_solver_iterations: f64,
    pub avg_convergence_time: f64,
    pub thrust_min: f64,
    pub thrust_max: f64,
    pub total_time: f64,
    pub navigation_time: Option<f64>,
    pub safety_margin_violation_fraction: f64,
    pub hard_collision_count: usize,
}

impl MetricsFile {
    pub fn new(scenario: &str, m: &Metrics<f64>) -> Self {
        Self {
            scenario: scenario.to_owned(),
            average_deviation: m.average_deviation,
            maximum_deviation: m.maximum_deviation,
            avg_solver_iterations: m.avg_solver_iterations,
            avg_convergence_time: m.avg_convergence_time,
            thrust_min: m.thrust_min,
            thrust_max: m.thrust_max,
            total_time: m.total_time,
            navigation_time: m.navigation_time,
            safety_margin_violation_fraction: m.safety_margin_violation_fraction,
            hard_collision_count: m.hard_collision_count,
        }
    }

    pub fn metrics(&self) -> Metrics<f64> {
        Metrics {
            average_deviation: self.average_deviation,
            maximum_deviation: self.maximum_deviation,
            avg_solver_iterations: self.avg_solver_iterations,
            avg_convergence_time: self.avg_convergence_time,
            thrust_min: self.thrust_min,
            thrust_max: self.thrust_max,
            total_time: self.total_time,
            navigation_time: self.navigation_time,
            safety_margin_violation_fraction: self.safety_margin_violation_fraction,
            hard_collision_count: self.hard_collision_count,
        }
    }
}

pub fn comparison_report(c: &RunComparison<f64>) -> String {
    let rows = [
        (
            "navigation_time_increase_percent",
            fmt_sig9(c.navigation_time_increase_percent),
        ),
        ("navigation_time", fmt_sig9(c.navigation_time)),
        ("average_deviation", fmt_sig9(c.average_deviation)),
        ("maximum_deviation", fmt_sig9(c.maximum_deviation)),
        ("avg_solver_iterations", fmt_sig9(c.avg_solver_iterations)),
        ("avg_convergence_time", fmt_sig9(c.avg_convergence_time)),
        ("thrust_min", fmt_sig9(c.thrust_min)),
        ("thrust_max", fmt_sig9(c.thrust_max)),
        ("total_time", fmt_sig9(c.total_time)),
        (
            "safety_margin_violation_fraction",
            fmt_sig9(c.safety_margin_violation_fraction),
        ),
        ("hard_collision_count", c.hard_collision_count.to_string()),
    ];
    rows.iter().map(|(k, v)| format!("{k:<34}{v}\n")).collect()
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no file name"))?;
    let tmp: PathBuf = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
