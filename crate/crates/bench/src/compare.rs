//! The three-controller comparison: runs every (task, controller, seed)
//! episode and writes traces, a summary and plot data.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use tubempc::sim::{metrics_summary, reference_trajectory, run_episode, ControllerKind, Metrics, SimTrace, TaskSpec};

use crate::config::ResolvedConfig;
use crate::trace::{render_trace, TraceError};

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

fn write_file(path: &Path, contents: &str) -> Result<(), CompareError> {
    fs::write(path, contents).map_err(|source| CompareError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), CompareError> {
    fs::create_dir_all(path).map_err(|source| CompareError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub controllers: Vec<String>,
    pub tasks: Vec<String>,
    pub output_dir: String,
    pub config: ResolvedConfig,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub task: String,
    pub controller: ControllerKind,
    pub seed: u64,
    pub trace_file: PathBuf,
    pub metrics: Metrics,
    /// Error that stopped the episode, with its step when known.
    pub failure: Option<(Option<usize>, String)>,
    /// Largest `‖z − z*‖ − γ` after the first control period (tube runs).
    pub tube_excess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingVerdict {
    pub task: String,
    pub optimal: f64,
    pub smooth: f64,
    pub delayed: f64,
    pub holds: bool,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub manifest: RunManifest,
    pub runs: Vec<RunRecord>,
    pub verdicts: Vec<OrderingVerdict>,
}

impl CompareReport {
    pub fn all_completed(&self) -> bool {
        self.runs.iter().all(|r| r.failure.is_none())
    }

    pub fn ordering_holds(&self) -> bool {
        self.verdicts.iter().all(|v| v.holds)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<11} {:<8} {:>5} {:>12} {:>12} {:>12} {:>10} {:>5}",
            "task", "ctrl", "seed", "final_err", "mean_err", "steady_err", "cost", "viol"
        );
        for r in &self.runs {
            let m = &r.metrics;
            let _ = writeln!(
                out,
                "{:<11} {:<8} {:>5} {:>12.6} {:>12.6} {:>12.6} {:>10.4} {:>5}{}",
                r.task,
                r.controller.name(),
                r.seed,
                m.final_error,
                m.mean_error,
                m.steady_error,
                m.total_cost,
                m.violation_count,
                r.failure.as_ref().map(|(_, e)| format!("  FAILED: {e}")).unwrap_or_default()
            );
        }
        for v in &self.verdicts {
            let _ = writeln!(
                out,
                "ordering {}: optimal {:.6} <= smooth {:.6} <= delayed {:.6}: {}",
                v.task,
                v.optimal,
                v.smooth,
                v.delayed,
                if v.holds { "holds" } else { "VIOLATED" }
            );
        }
        out
    }
}

/// Largest amount by which the tube deviation exceeds its radius after the
/// first control period.
pub fn tube_excess(trace: &SimTrace, m: usize) -> Option<f64> {
    trace
        .samples
        .iter()
        .filter(|s| s.step >= m)
        .filter_map(|s| s.gamma.map(|g| (s.z.0 - s.z_star.0).norm() - g))
        .reduce(f64::max)
}

pub fn trace_file_name(task: &str, controller: ControllerKind, seed: u64) -> String {
    format!("{task}_{}_seed{seed}.csv", controller.name())
}

/// Runs every episode and writes into `out`:
/// `manifest.json` (before any episode), `runs/*.csv`, `summary.csv`,
/// `plot_<task>_error.csv` and `plot_<task>_xy.csv`. Episode failures are
/// recorded and do not stop the remaining runs.
pub fn run_compare(
    config: &ResolvedConfig,
    controllers: &[ControllerKind],
    tasks: &[TaskSpec],
    seeds: &[u64],
    out: &Path,
) -> Result<CompareReport, CompareError> {
    let runs_dir = out.join("runs");
    create_dir(&runs_dir)?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config.hash(),
        seeds: seeds.to_vec(),
        controllers: controllers.iter().map(|c| c.name().to_string()).collect(),
        tasks: tasks.iter().map(|t| t.name().to_string()).collect(),
        output_dir: out.display().to_string(),
        config: config.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&out.join("manifest.json"), &(json + "\n"))?;

    let mut jobs = Vec::new();
    for task in tasks {
        for &c in controllers {
            for &seed in seeds {
                jobs.push((task, c, seed));
            }
        }
    }
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(task, c, seed)| run_episode(&config.sim_config(seed), c, task))
        .collect();

    let mut runs = Vec::with_capacity(jobs.len());
    let mut traces = Vec::with_capacity(jobs.len());
    for ((task, c, seed), result) in jobs.iter().zip(results) {
        let name = trace_file_name(task.name(), *c, *seed);
        let path = runs_dir.join(&name);
        let (trace, failure) = match result {
            Ok(tr) => {
                let failure = tr.failure.clone().map(|(s, e)| (Some(s), e));
                (Some(tr), failure)
            }
            Err(e) => (None, Some((None, e.to_string()))),
        };
        let empty = SimTrace::new(config.delta, config.duration);
        let tr = trace.as_ref().unwrap_or(&empty);
        write_file(&path, &render_trace(tr))?;
        runs.push(RunRecord {
            task: task.name().to_string(),
            controller: *c,
            seed: *seed,
            trace_file: PathBuf::from("runs").join(name),
            metrics: metrics_summary(tr),
            failure,
            tube_excess: tube_excess(tr, config.m),
        });
        traces.push(trace);
    }

    write_file(&out.join("summary.csv"), &render_summary(&runs))?;
    for task in tasks {
        let (err, xy) = render_plots(task, controllers, seeds, &runs, &traces, config.delta);
        write_file(&out.join(format!("plot_{}_error.csv", task.name())), &err)?;
        write_file(&out.join(format!("plot_{}_xy.csv", task.name())), &xy)?;
    }

    let verdicts = tasks
        .iter()
        .filter_map(|t| ordering_verdict(t.name(), &runs))
        .collect();
    Ok(CompareReport {
        manifest,
        runs,
        verdicts,
    })
}

pub const SUMMARY_COLUMNS: &str = "task,controller,seed,status,failure_step,final_error,mean_error,steady_error,total_cost,violation_count,mean_solve_latency_steps";

fn render_summary(runs: &[RunRecord]) -> String {
    let mut out = String::from(SUMMARY_COLUMNS);
    out.push('\n');
    for r in runs {
        let m = &r.metrics;
        let (status, step) = match &r.failure {
            None => ("ok", String::new()),
            Some((s, _)) => ("failed", s.map(|s| s.to_string()).unwrap_or_default()),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:?},{:?},{:?},{:?},{},{:?}",
            r.task,
            r.controller.name(),
            r.seed,
            status,
            step,
            m.final_error,
            m.mean_error,
            m.steady_error,
            m.total_cost,
            m.violation_count,
            m.mean_solve_latency_steps
        );
    }
    out
}

fn render_plots(
    task: &TaskSpec,
    controllers: &[ControllerKind],
    seeds: &[u64],
    runs: &[RunRecord],
    traces: &[Option<SimTrace>],
    delta: f64,
) -> (String, String) {
    let pick = |c: ControllerKind| -> Vec<&SimTrace> {
        runs.iter()
            .zip(traces)
            .filter(|(r, _)| r.task == task.name() && r.controller == c)
            .filter_map(|(_, t)| t.as_ref())
            .collect()
    };
    let steps = (task.duration / delta).round() as usize;

    let mut err = String::from("t");
    for c in controllers {
        let _ = write!(err, ",{}", c.name());
    }
    err.push('\n');
    let per_controller: Vec<Vec<&SimTrace>> = controllers.iter().map(|&c| pick(c)).collect();
    for j in 0..=steps {
        let _ = write!(err, "{:?}", j as f64 * delta);
        for traces in &per_controller {
            let vals: Vec<f64> = traces
                .iter()
                .filter_map(|t| t.samples.get(j).map(|s| s.pos_err))
                .collect();
            if vals.is_empty() {
                err.push(',');
            } else {
                let _ = write!(err, ",{:?}", vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        err.push('\n');
    }

    // Polylines of the first seed.
    let first = seeds.first().copied();
    let mut xy = String::from("t,x_ref,y_ref");
    for c in controllers {
        let _ = write!(xy, ",x_{0},y_{0}", c.name());
    }
    xy.push('\n');
    let first_traces: Vec<Option<&SimTrace>> = controllers
        .iter()
        .map(|&c| {
            runs.iter()
                .zip(traces)
                .find(|(r, _)| r.task == task.name() && r.controller == c && Some(r.seed) == first)
                .and_then(|(_, t)| t.as_ref())
        })
        .collect();
    for j in 0..=steps {
        let t = (j as f64 * delta).min(task.duration);
        let [xr, yr] = reference_trajectory(task, t).unwrap_or([f64::NAN, f64::NAN]);
        let _ = write!(xy, "{:?},{xr:?},{yr:?}", j as f64 * delta);
        for tr in &first_traces {
            match tr.and_then(|t| t.samples.get(j)) {
                Some(s) => {
                    let _ = write!(xy, ",{:?},{:?}", s.z.x(), s.z.y());
                }
                None => xy.push_str(",,"),
            }
        }
        xy.push('\n');
    }
    (err, xy)
}

/// `optimal ≤ smooth ≤ delayed` on the seed-averaged steady error, when all
/// three controllers ran on the task.
pub fn ordering_verdict(task: &str, runs: &[RunRecord]) -> Option<OrderingVerdict> {
    let mean = |c: ControllerKind| -> Option<f64> {
        let v: Vec<f64> = runs
            .iter()
            .filter(|r| r.task == task && r.controller == c)
            .map(|r| r.metrics.steady_error)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let optimal = mean(ControllerKind::OptimalMpc)?;
    let smooth = mean(ControllerKind::SmoothTubeMpc)?;
    let delayed = mean(ControllerKind::TimeTriggeredDelayedMpc)?;
    Some(OrderingVerdict {
        task: task.to_string(),
        optimal,
        smooth,
        delayed,
        holds: optimal <= smooth && smooth <= delayed,
    })
}
