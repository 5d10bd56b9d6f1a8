//! Scenario files: JSON mirror of [`Scenario`] with defaults for every field
//! except `name` and `waypoints`.

use std::fmt;
use std::path::Path;

use quadnmpc::model::{ControlVec, ModelParams, StateVec};
use quadnmpc::ocp::{ObstacleMode, OcpConfig, Weights};
use quadnmpc::sim::{PlantIntegrator, Scenario};
use quadnmpc::solver::SolverConfig;
use quadnmpc::{Error as CoreError, Obstacle, ObstacleField, Scenario64};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// A scenario that failed to parse or validate, anchored to a file line where possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioError {
    pub file: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.file, line, self.message),
            None => write!(f, "{}: {}", self.file, self.message),
        }
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub waypoints: Vec<[f64; 3]>,
    #[serde(default = "defaults::spline_degree")]
    pub spline_degree: usize,
    #[serde(default = "defaults::traversal_duration")]
    pub traversal_duration: f64,
    /// At rest on the first waypoint when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<StateFile>,
    #[serde(default)]
    pub params: ParamsFile,
    #[serde(default)]
    pub weights: WeightsFile,
    #[serde(default)]
    pub ocp: OcpFile,
    #[serde(default)]
    pub solver: SolverFile,
    #[serde(default)]
    pub field: FieldFile,
    #[serde(default = "defaults::sim_duration")]
    pub sim_duration: f64,
    #[serde(default)]
    pub plant: PlantFile,
    #[serde(default)]
    pub wind: [f64; 3],
    #[serde(default = "defaults::arrival_radius")]
    pub arrival_radius: f64,
    #[serde(default = "defaults::warm_start")]
    pub warm_start: bool,
}

mod defaults {
    use super::*;

    fn base() -> Scenario64 {
        Scenario::with_defaults("", vec![])
    }
    pub fn spline_degree() -> usize {
        base().spline_degree
    }
    pub fn traversal_duration() -> f64 {
        base().traversal_duration
    }
    pub fn sim_duration() -> f64 {
        base().sim_duration
    }
    pub fn arrival_radius() -> f64 {
        base().arrival_radius
    }
    pub fn warm_start() -> bool {
        base().warm_start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateFile {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub psi_dot: f64,
}

impl From<StateFile> for StateVec<f64> {
    fn from(s: StateFile) -> Self {
        StateVec([s.x, s.y, s.z, s.phi, s.theta, s.psi, s.vx, s.vy, s.vz, s.psi_dot])
    }
}

impl From<StateVec<f64>> for StateFile {
    fn from(v: StateVec<f64>) -> Self {
        let [x, y, z, phi, theta, psi, vx, vy, vz, psi_dot] = v.0;
        Self {
            x,
            y,
            z,
            phi,
            theta,
            psi,
            vx,
            vy,
            vz,
            psi_dot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlFile {
    pub thrust: f64,
    pub phi_r: f64,
    pub theta_r: f64,
    pub psi_dot_r: f64,
}

impl From<ControlFile> for ControlVec<f64> {
    fn from(c: ControlFile) -> Self {
        ControlVec([c.thrust, c.phi_r, c.theta_r, c.psi_dot_r])
    }
}

impl From<ControlVec<f64>> for ControlFile {
    fn from(u: ControlVec<f64>) -> Self {
        let [thrust, phi_r, theta_r, psi_dot_r] = u.0;
        Self {
            thrust,
            phi_r,
            theta_r,
            psi_dot_r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsFile {
    pub mass: f64,
    pub gravity: f64,
    pub drag: [f64; 3],
    pub tau_phi: f64,
    pub tau_theta: f64,
    pub tau_psi: f64,
    pub k_phi: f64,
    pub k_theta: f64,
    pub k_psi: f64,
}

impl Default for ParamsFile {
    fn default() -> Self {
        ModelParams::default().into()
    }
}

impl From<ModelParams<f64>> for ParamsFile {
    fn from(p: ModelParams<f64>) -> Self {
        Self {
            mass: p.mass,
            gravity: p.gravity,
            drag: p.drag,
            tau_phi: p.tau_phi,
            tau_theta: p.tau_theta,
            tau_psi: p.tau_psi,
            k_phi: p.k_phi,
            k_theta: p.k_theta,
            k_psi: p.k_psi,
        }
    }
}

impl From<ParamsFile> for ModelParams<f64> {
    fn from(p: ParamsFile) -> Self {
        Self {
            mass: p.mass,
            gravity: p.gravity,
            drag: p.drag,
            tau_phi: p.tau_phi,
            tau_theta: p.tau_theta,
            tau_psi: p.tau_psi,
            k_phi: p.k_phi,
            k_theta: p.k_theta,
            k_psi: p.k_psi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsFile {
    pub q: [f64; 10],
    pub r: [f64; 4],
    pub r_delta: [f64; 4],
    pub q_f: [f64; 10],
}

impl Default for WeightsFile {
    fn default() -> Self {
        Weights::default().into()
    }
}

impl From<Weights<f64>> for WeightsFile {
    fn from(w: Weights<f64>) -> Self {
        Self {
            q: w.q,
            r: w.r,
            r_delta: w.r_delta,
            q_f: w.q_f,
        }
    }
}

impl From<WeightsFile> for Weights<f64> {
    fn from(w: WeightsFile) -> Self {
        Self {
            q: w.q,
            r: w.r,
            r_delta: w.r_delta,
            q_f: w.q_f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleModeFile {
    #[default]
    Penalty,
    HardConstraint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpFile {
    pub horizon: usize,
    pub dt: f64,
    pub u_min: ControlFile,
    pub u_max: ControlFile,
    pub obstacle_mode: ObstacleModeFile,
}

impl Default for OcpFile {
    fn default() -> Self {
        OcpConfig::default().into()
    }
}

impl From<OcpConfig<f64>> for OcpFile {
    fn from(c: OcpConfig<f64>) -> Self {
        Self {
            horizon: c.horizon,
            dt: c.dt,
            u_min: c.u_min.into(),
            u_max: c.u_max.into(),
            obstacle_mode: match c.obstacle_mode {
                ObstacleMode::Penalty => ObstacleModeFile::Penalty,
                ObstacleMode::HardConstraint => ObstacleModeFile::HardConstraint,
            },
        }
    }
}

impl From<OcpFile> for OcpConfig<f64> {
    fn from(c: OcpFile) -> Self {
        Self {
            horizon: c.horizon,
            dt: c.dt,
            u_min: c.u_min.into(),
            u_max: c.u_max.into(),
            obstacle_mode: match c.obstacle_mode {
                ObstacleModeFile::Penalty => ObstacleMode::Penalty,
                ObstacleModeFile::HardConstraint => ObstacleMode::HardConstraint,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverFile {
    pub max_iterations: usize,
    pub kkt_tolerance: f64,
    pub line_search_shrink: f64,
    pub line_search_min_step: f64,
    pub constraint_tolerance: f64,
}

impl Default for SolverFile {
    fn default() -> Self {
        SolverConfig::default().into()
    }
}

impl From<SolverConfig<f64>> for SolverFile {
    fn from(c: SolverConfig<f64>) -> Self {
        Self {
            max_iterations: c.max_iterations,
            kkt_tolerance: c.kkt_tolerance,
            line_search_shrink: c.line_search_shrink,
            line_search_min_step: c.line_search_min_step,
            constraint_tolerance: c.constraint_tolerance,
        }
    }
}

impl From<SolverFile> for SolverConfig<f64> {
    fn from(c: SolverFile) -> Self {
        Self {
            max_iterations: c.max_iterations,
            kkt_tolerance: c.kkt_tolerance,
            line_search_shrink: c.line_search_shrink,
            line_search_min_step: c.line_search_min_step,
            constraint_tolerance: c.constraint_tolerance,
        }
    }
}

/// Checked on deserialisation so a bad sphere is reported at its own line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawObstacle")]
pub struct ObstacleFile {
    pub center: [f64; 3],
    pub radius: f64,
    pub safety: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObstacle {
    center: [f64; 3],
    radius: f64,
    #[serde(default = "default_safety")]
    safety: f64,
}

fn default_safety() -> f64 {
    0.5
}

impl TryFrom<RawObstacle> for ObstacleFile {
    type Error = CoreError;

    fn try_from(o: RawObstacle) -> Result<Self, CoreError> {
        Obstacle::new(o.center, o.radius, o.safety)?;
        Ok(Self {
            center: o.center,
            radius: o.radius,
            safety: o.safety,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldFile {
    pub eta: f64,
    pub obstacles: Vec<ObstacleFile>,
}

impl Default for FieldFile {
    fn default() -> Self {
        Self {
            eta: ObstacleField::<f64>::default().eta,
            obstacles: vec![],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantFile {
    #[default]
    Euler,
    Rk4,
}

impl ScenarioFile {
    /// Fills in the initial state so the file fully describes the run.
    pub fn resolved(mut self) -> Self {
        if self.initial_state.is_none() {
            let start = self.waypoints.first().copied().unwrap_or([0.0; 3]);
            self.initial_state = Some(StateVec::at_rest(start).into());
        }
        self
    }

    pub fn to_scenario(&self) -> Scenario64 {
        let mut s = Scenario::with_defaults(self.name.clone(), self.waypoints.clone());
        s.spline_degree = self.spline_degree;
        s.traversal_duration = self.traversal_duration;
        if let Some(x0) = self.initial_state {
            s.initial_state = x0.into();
        }
        s.params = self.params.into();
        s.weights = self.weights.into();
        s.ocp = self.ocp.into();
        s.solver = self.solver.into();
        s.field = ObstacleField {
            obstacles: self
                .field
                .obstacles
                .iter()
                .map(|o| Obstacle {
                    center: o.center,
                    radius: o.radius,
                    safety: o.safety,
                })
                .collect(),
            eta: self.field.eta,
        };
        s.sim_duration = self.sim_duration;
        s.plant = match self.plant {
            PlantFile::Euler => PlantIntegrator::Euler,
            PlantFile::Rk4 => PlantIntegrator::Rk4,
        };
        s.wind = self.wind;
        s.arrival_radius = self.arrival_radius;
        s.warm_start = self.warm_start;
        s
    }

    pub fn from_scenario(s: &Scenario64) -> Self {
        Self {
            name: s.name.clone(),
            waypoints: s.waypoints.clone(),
            spline_degree: s.spline_degree,
            traversal_duration: s.traversal_duration,
            initial_state: Some(s.initial_state.into()),
            params: s.params.into(),
            weights: s.weights.into(),
            ocp: s.ocp.into(),
            solver: s.solver.into(),
            field: FieldFile {
                eta: s.field.eta,
                obstacles: s
                    .field
                    .obstacles
                    .iter()
                    .map(|o| ObstacleFile {
                        center: o.center,
                        radius: o.radius,
                        safety: o.safety,
                    })
                    .collect(),
            },
            sim_duration: s.sim_duration,
            plant: match s.plant {
                PlantIntegrator::Euler => PlantFile::Euler,
                PlantIntegrator::Rk4 => PlantFile::Rk4,
            },
            wind: s.wind,
            arrival_radius: s.arrival_radius,
            warm_start: s.warm_start,
        }
    }
}

/// One `--set key=value` override. Keys are dotted paths into the resolved
/// scenario, array elements are addressed by index (`field.obstacles.0.radius`).
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: Value,
    raw: String,
}

impl std::str::FromStr for Override {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{s}`"))?;
        let key = key.trim();
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(format!("malformed key `{key}`"));
        }
        // bare words that are not JSON become strings
        let value = serde_json::from_str(value.trim()).unwrap_or_else(|_| Value::String(value.trim().to_owned()));
        Ok(Self {
            path: key.split('.').map(str::to_owned).collect(),
            value,
            raw: s.to_owned(),
        })
    }
}

impl fmt::Display for Override {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

fn apply(root: &mut Value, o: &Override) -> Result<(), String> {
    let (leaf, parents) = o.path.split_last().expect("non-empty path");
    let mut node = root;
    for (depth, key) in parents.iter().enumerate() {
        let here = o.path[..=depth].join(".");
        node = match node {
            Value::Object(map) => map.get_mut(key).ok_or_else(|| format!("no such key `{here}`"))?,
            Value::Array(items) => {
                let i: usize = key.parse().map_err(|_| format!("`{here}` needs a numeric index"))?;
                items
                    .get_mut(i)
                    .ok_or_else(|| format!("index out of range in `{here}`"))?
            }
            _ => return Err(format!("`{}` is not an object or array", o.path[..depth].join("."))),
        };
    }
    match node {
        // unknown leaf keys are inserted and rejected by the schema
        Value::Object(map) => {
            map.insert(leaf.clone(), o.value.clone());
        }
        Value::Array(items) => {
            let i: usize = leaf
                .parse()
                .map_err(|_| format!("`{}` needs a numeric index", o.path.join(".")))?;
            *items
                .get_mut(i)
                .ok_or_else(|| format!("index out of range in `{}`", o.path.join(".")))? = o.value.clone();
        }
        _ => return Err(format!("`{}` is not an object or array", parents.join("."))),
    }
    Ok(())
}

/// Line of the first occurrence of `"key"` in the source text.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

/// The parser reports where it stopped, which can be past the offending
/// entry; step back to the last line at or before it that mentions the key.
fn refine_line(text: &str, reported: usize, message: &str) -> usize {
    let Some(key) = message.split('`').nth(1) else {
        return reported;
    };
    let needle = format!("\"{key}\"");
    text.lines()
        .take(reported)
        .enumerate()
        .filter(|(_, l)| l.contains(&needle))
        .last()
        .map_or(reported, |(i, _)| i + 1)
}

fn file_key(core_name: &str) -> &str {
    match core_name {
        "degree" => "spline_degree",
        "n_ctrl" => "waypoints",
        other => other,
    }
}

/// Parses, resolves, applies overrides and validates a scenario document.
pub fn load_str(text: &str, file: &str, overrides: &[Override]) -> Result<ScenarioFile, ScenarioError> {
    let err = |line, message: String| ScenarioError {
        file: file.to_owned(),
        line,
        message,
    };
    let parsed: ScenarioFile = serde_json::from_str(text).map_err(|e| {
        // serde_json appends the position; keep only the description
        let msg = e.to_string();
        let msg = msg.rsplit_once(" at line ").map_or(msg.clone(), |(m, _)| m.to_owned());
        let line = (e.line() > 0).then(|| refine_line(text, e.line(), &msg));
        err(line, msg)
    })?;
    let mut resolved = parsed.resolved();
    if !overrides.is_empty() {
        let mut value = serde_json::to_value(&resolved).expect("scenario serialises");
        for o in overrides {
            apply(&mut value, o).map_err(|m| err(None, format!("--set {o}: {m}")))?;
        }
        resolved = serde_json::from_value(value).map_err(|e| {
            let keys: Vec<String> = overrides.iter().map(ToString::to_string).collect();
            err(None, format!("--set {}: {e}", keys.join(" --set ")))
        })?;
    }
    resolved.to_scenario().validate().map_err(|e| {
        let line = match &e {
            CoreError::InvalidParameter { name, .. } => line_of_key(text, file_key(name)),
            _ => None,
        };
        err(line, e.to_string())
    })?;
    Ok(resolved)
}

pub fn load(path: &Path, overrides: &[Override]) -> Result<ScenarioFile, ScenarioError> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError {
        file: file.clone(),
        line: None,
        message: e.to_string(),
    })?;
    load_str(&text, &file, overrides)
}
