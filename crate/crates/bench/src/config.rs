//! TOML configuration for the benchmark.
//!
//! Every key is optional and defaults to the benchmark preset. Unknown keys
//! are rejected with the closest known key as a hint.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use toml::{Table, Value};

use tubempc::model::ManipulatorParams;
use tubempc::sim::{ControllerKind, SimConfig, TaskKind, TaskSpec, Theorem2Policy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown key `{key}`{}{}", line.map(|l| format!(" at line {l}")).unwrap_or_default(), suggestion.as_ref().map(|s| format!(", did you mean `{s}`?")).unwrap_or_default())]
    UnknownKey {
        key: String,
        line: Option<usize>,
        suggestion: Option<String>,
    },
    #[error("invalid value: {0}")]
    Value(String),
    #[error("rule violated: {0}")]
    Invariant(String),
}

const TOP_KEYS: &[&str] = &[
    "preset",
    "delta",
    "horizon",
    "m",
    "duration",
    "eta",
    "eta1",
    "seed",
    "seeds",
    "theorem2_policy",
    "cost_mask",
    "epsilon",
    "q_diag",
    "r_diag",
    "tasks",
    "controllers",
    "manipulator",
    "solver",
    "position",
    "trajectory",
];
const MANIPULATOR_KEYS: &[&str] = &["link_lengths", "theta_lo", "theta_hi", "omega_max", "initial_theta"];
const SOLVER_KEYS: &[&str] = &["tol", "max_iter"];
const POSITION_KEYS: &[&str] = &["target"];
const TRAJECTORY_KEYS: &[&str] = &["arc_center", "arc_radius", "arc_start_angle", "arc_end_angle", "line_end"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulatorSection {
    pub link_lengths: [f64; 3],
    pub theta_lo: [f64; 3],
    pub theta_hi: [f64; 3],
    pub omega_max: [f64; 3],
    pub initial_theta: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionSection {
    pub target: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySection {
    pub arc_center: [f64; 2],
    pub arc_radius: f64,
    pub arc_start_angle: f64,
    pub arc_end_angle: f64,
    pub line_end: [f64; 2],
}

/// Fully resolved configuration. Its JSON form is hashed for provenance and
/// its TOML form is what `preset` prints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub delta: f64,
    pub horizon: f64,
    pub m: usize,
    pub duration: f64,
    pub eta: f64,
    pub eta1: f64,
    pub seed: u64,
    pub seeds: usize,
    pub theorem2_policy: String,
    pub cost_mask: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub q_diag: [f64; 5],
    pub r_diag: [f64; 3],
    pub tasks: Vec<String>,
    pub controllers: Vec<String>,
    pub manipulator: ManipulatorSection,
    pub solver: SolverSection,
    pub position: PositionSection,
    pub trajectory: TrajectorySection,
}

#[derive(Debug, Default, Deserialize)]
struct RawManipulator {
    link_lengths: Option<[f64; 3]>,
    theta_lo: Option<[f64; 3]>,
    theta_hi: Option<[f64; 3]>,
    omega_max: Option<[f64; 3]>,
    initial_theta: Option<[f64; 3]>,
}

#[derive(Debug, Default, Deserialize)]
struct RawSolver {
    tol: Option<f64>,
    max_iter: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
struct RawPosition {
    target: Option<[f64; 2]>,
}

#[derive(Debug, Default, Deserialize)]
struct RawTrajectory {
    arc_center: Option<[f64; 2]>,
    arc_radius: Option<f64>,
    arc_start_angle: Option<f64>,
    arc_end_angle: Option<f64>,
    line_end: Option<[f64; 2]>,
}

#[derive(Debug, Default, Deserialize)]
struct RawConfig {
    preset: Option<String>,
    delta: Option<f64>,
    horizon: Option<f64>,
    m: Option<usize>,
    duration: Option<f64>,
    eta: Option<f64>,
    eta1: Option<f64>,
    seed: Option<u64>,
    seeds: Option<usize>,
    theorem2_policy: Option<String>,
    cost_mask: Option<bool>,
    epsilon: Option<f64>,
    q_diag: Option<[f64; 5]>,
    r_diag: Option<[f64; 3]>,
    tasks: Option<Vec<String>>,
    controllers: Option<Vec<String>>,
    manipulator: Option<RawManipulator>,
    solver: Option<RawSolver>,
    position: Option<RawPosition>,
    trajectory: Option<RawTrajectory>,
}

impl ResolvedConfig {
    /// The benchmark preset.
    pub fn paper() -> Self {
        let sim = SimConfig::paper();
        let p = &sim.params;
        let TaskKind::PositionTracking { target } = TaskSpec::paper_position().kind else {
            unreachable!()
        };
        let traj = TaskSpec::paper_trajectory();
        let TaskKind::TrajectoryTracking {
            arc_center,
            arc_radius,
            arc_start_angle,
            arc_end_angle,
            line_end,
        } = traj.kind
        else {
            unreachable!()
        };
        Self {
            delta: sim.delta,
            horizon: sim.horizon,
            m: sim.m,
            duration: traj.duration,
            eta: sim.eta,
            eta1: p.eta1,
            seed: 0,
            seeds: 10,
            theorem2_policy: "warn".into(),
            cost_mask: sim.cost_mask,
            epsilon: sim.epsilon,
            q_diag: sim.q_diag,
            r_diag: sim.r_diag,
            tasks: vec!["position".into(), "trajectory".into()],
            controllers: ControllerKind::ALL.iter().map(|c| c.name().to_string()).collect(),
            manipulator: ManipulatorSection {
                link_lengths: p.link_lengths,
                theta_lo: p.theta_lo,
                theta_hi: p.theta_hi,
                omega_max: p.omega_max,
                initial_theta: sim.initial_theta,
            },
            solver: SolverSection {
                tol: sim.solver_tol,
                max_iter: sim.solver_max_iter,
            },
            position: PositionSection { target },
            trajectory: TrajectorySection {
                arc_center,
                arc_radius,
                arc_start_angle,
                arc_end_angle,
                line_end,
            },
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn sim_config(&self, seed: u64) -> SimConfig {
        let mp = &self.manipulator;
        SimConfig {
            params: ManipulatorParams {
                link_lengths: mp.link_lengths,
                theta_lo: mp.theta_lo,
                theta_hi: mp.theta_hi,
                omega_max: mp.omega_max,
                eta1: self.eta1,
            },
            initial_theta: mp.initial_theta,
            delta: self.delta,
            horizon: self.horizon,
            m: self.m,
            q_diag: self.q_diag,
            r_diag: self.r_diag,
            eta: self.eta,
            seed,
            theorem2_policy: if self.theorem2_policy == "abort" {
                Theorem2Policy::Abort
            } else {
                Theorem2Policy::Warn
            },
            cost_mask: self.cost_mask,
            epsilon: self.epsilon,
            solver_tol: self.solver.tol,
            solver_max_iter: self.solver.max_iter,
        }
    }

    pub fn task(&self, name: &str) -> Result<TaskSpec, ConfigError> {
        let kind = match name {
            "position" => TaskKind::PositionTracking {
                target: self.position.target,
            },
            "trajectory" => {
                let t = &self.trajectory;
                TaskKind::TrajectoryTracking {
                    arc_center: t.arc_center,
                    arc_radius: t.arc_radius,
                    arc_start_angle: t.arc_start_angle,
                    arc_end_angle: t.arc_end_angle,
                    line_end: t.line_end,
                }
            }
            other => {
                return Err(ConfigError::Value(format!(
                    "unknown task `{other}` (expected position or trajectory)"
                )))
            }
        };
        Ok(TaskSpec {
            kind,
            duration: self.duration,
        })
    }

    pub fn task_specs(&self) -> Result<Vec<TaskSpec>, ConfigError> {
        self.tasks.iter().map(|t| self.task(t)).collect()
    }

    pub fn controller_kinds(&self) -> Result<Vec<ControllerKind>, ConfigError> {
        self.controllers
            .iter()
            .map(|c| c.parse().map_err(|e: tubempc::Error| ConfigError::Value(e.to_string())))
            .collect()
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|s| self.seed + s).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(ConfigError::Invariant("duration > 0".into()));
        }
        if self.m as f64 * self.delta > self.horizon + 1e-9 {
            return Err(ConfigError::Invariant(format!(
                "m * delta <= horizon ({} * {} > {})",
                self.m, self.delta, self.horizon
            )));
        }
        let steps = self.duration / self.delta;
        if (steps - steps.round()).abs() > 1e-6 {
            return Err(ConfigError::Invariant(format!(
                "duration must be a multiple of delta ({} / {})",
                self.duration, self.delta
            )));
        }
        if self.seeds == 0 {
            return Err(ConfigError::Invariant("seeds >= 1".into()));
        }
        if !matches!(self.theorem2_policy.as_str(), "warn" | "abort") {
            return Err(ConfigError::Value(format!(
                "theorem2_policy must be `warn` or `abort`, got `{}`",
                self.theorem2_policy
            )));
        }
        self.sim_config(self.seed)
            .validate()
            .map_err(|e| ConfigError::Invariant(e.to_string()))?;
        for t in self.task_specs()? {
            t.validate().map_err(|e| ConfigError::Invariant(e.to_string()))?;
        }
        self.controller_kinds()?;
        Ok(())
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
    (line, column)
}

/// Line of the first `key = ...` after the header of `table` (or from the
/// top for root keys).
fn key_line(text: &str, table: Option<&str>, key: &str) -> Option<usize> {
    let mut in_table = table.is_none();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            in_table = table.is_some_and(|t| line.trim_matches(|c| c == '[' || c == ']').trim() == t);
            continue;
        }
        if in_table {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim().trim_matches('"') == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn suggest(key: &str, known: &[&str]) -> Option<String> {
    known
        .iter()
        .map(|k| (strsim::levenshtein(key, k), *k))
        .filter(|(d, k)| *d <= 3.max(k.len() / 3))
        .min_by_key(|(d, _)| *d)
        .map(|(_, k)| k.to_string())
}

fn check_keys(text: &str, table: &Table, known: &[&str], name: Option<&str>) -> Result<(), ConfigError> {
    for key in table.keys() {
        if !known.contains(&key.as_str()) {
            let full = match name {
                Some(t) => format!("{t}.{key}"),
                None => key.clone(),
            };
            return Err(ConfigError::UnknownKey {
                key: full,
                line: key_line(text, name, key),
                suggestion: suggest(key, known),
            });
        }
    }
    Ok(())
}

/// Parses configuration text. An empty document yields the preset.
pub fn parse_config(text: &str) -> Result<ResolvedConfig, ConfigError> {
    let table: Table = text.parse::<Table>().map_err(|e| {
        let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
        ConfigError::Parse {
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })?;
    check_keys(text, &table, TOP_KEYS, None)?;
    for (name, keys) in [
        ("manipulator", MANIPULATOR_KEYS),
        ("solver", SOLVER_KEYS),
        ("position", POSITION_KEYS),
        ("trajectory", TRAJECTORY_KEYS),
    ] {
        match table.get(name) {
            Some(Value::Table(sub)) => check_keys(text, sub, keys, Some(name))?,
            Some(_) => return Err(ConfigError::Value(format!("`{name}` must be a table"))),
            None => {}
        }
    }
    let raw: RawConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Value(e.message().trim().to_string()))?;

    if let Some(p) = &raw.preset {
        if p != "paper" {
            return Err(ConfigError::Value(format!("unknown preset `{p}` (available: paper)")));
        }
    }
    let mut c = ResolvedConfig::paper();
    macro_rules! take {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    take!(c.delta, raw.delta);
    take!(c.horizon, raw.horizon);
    take!(c.m, raw.m);
    take!(c.duration, raw.duration);
    take!(c.eta, raw.eta);
    take!(c.eta1, raw.eta1);
    take!(c.seed, raw.seed);
    take!(c.seeds, raw.seeds);
    take!(c.theorem2_policy, raw.theorem2_policy);
    take!(c.cost_mask, raw.cost_mask);
    if raw.epsilon.is_some() {
        c.epsilon = raw.epsilon;
    }
    take!(c.q_diag, raw.q_diag);
    take!(c.r_diag, raw.r_diag);
    take!(c.tasks, raw.tasks);
    take!(c.controllers, raw.controllers);
    let mp = raw.manipulator.unwrap_or_default();
    take!(c.manipulator.link_lengths, mp.link_lengths);
    take!(c.manipulator.theta_lo, mp.theta_lo);
    take!(c.manipulator.theta_hi, mp.theta_hi);
    take!(c.manipulator.omega_max, mp.omega_max);
    take!(c.manipulator.initial_theta, mp.initial_theta);
    let s = raw.solver.unwrap_or_default();
    take!(c.solver.tol, s.tol);
    take!(c.solver.max_iter, s.max_iter);
    let p = raw.position.unwrap_or_default();
    take!(c.position.target, p.target);
    let t = raw.trajectory.unwrap_or_default();
    take!(c.trajectory.arc_center, t.arc_center);
    take!(c.trajectory.arc_radius, t.arc_radius);
    take!(c.trajectory.arc_start_angle, t.arc_start_angle);
    take!(c.trajectory.arc_end_angle, t.arc_end_angle);
    take!(c.trajectory.line_end, t.line_end);
    c.validate()?;
    Ok(c)
}

pub fn load_config(path: &Path) -> Result<ResolvedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}
