use std::time::Duration;

use crate::gains::Theorem2Report;
use crate::model::{ConstraintReport, ControlVector, DisturbanceVector, StateVector};

/// One grid point of an episode. The input, decision and disturbance are the
/// ones applied over `[t, t + δ)`; they are zero on the final sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub step: usize,
    pub t: f64,
    pub z: StateVector,
    /// Nominal state the active plan predicts for this step.
    pub z_star: StateVector,
    pub u: ControlVector,
    pub v: ControlVector,
    pub e: DisturbanceVector,
    pub e_norm: f64,
    pub stage_cost: f64,
    pub pos_err: f64,
    pub margins: ConstraintReport,
    pub viol: usize,
    pub solve_latency_steps: usize,
    /// Measurement step the applied decision was computed from.
    pub source_step: Option<usize>,
    /// Tube radius of the active plan.
    pub gamma: Option<f64>,
}

/// Wall-clock time spent in the optimizer. Never compared, so traces from
/// different hosts stay equal.
#[derive(Debug, Clone, Copy, Default)]
pub struct WallClock(pub Duration);

impl PartialEq for WallClock {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub delta: f64,
    pub duration: f64,
    pub samples: Vec<Sample>,
    /// Stability report per relinearization, keyed by measurement step.
    pub theorem2: Vec<(usize, Theorem2Report)>,
    /// Step and message of the error that ended the episode early.
    pub failure: Option<(usize, String)>,
    pub solver_time: WallClock,
    /// Plans whose prediction missed the terminal set.
    pub terminal_misses: usize,
}

impl SimTrace {
    pub fn new(delta: f64, duration: f64) -> Self {
        Self {
            delta,
            duration,
            samples: Vec::new(),
            theorem2: Vec::new(),
            failure: None,
            solver_time: WallClock::default(),
            terminal_misses: 0,
        }
    }

    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub final_error: f64,
    pub mean_error: f64,
    /// Mean position error over the second half of the episode.
    pub steady_error: f64,
    pub total_cost: f64,
    pub violation_count: usize,
    pub mean_solve_latency_steps: f64,
}

/// Aggregates of a trace; `total_cost = δ Σ stage_cost` and the steady
/// error averages the samples at `t ≥ duration/2`. An empty trace gives
/// zeros.
pub fn metrics_summary(trace: &SimTrace) -> Metrics {
    let s = &trace.samples;
    if s.is_empty() {
        return Metrics {
            final_error: 0.0,
            mean_error: 0.0,
            steady_error: 0.0,
            total_cost: 0.0,
            violation_count: 0,
            mean_solve_latency_steps: 0.0,
        };
    }
    let n = s.len() as f64;
    let steady: Vec<f64> = s
        .iter()
        .filter(|x| x.t >= 0.5 * trace.duration - 1e-9)
        .map(|x| x.pos_err)
        .collect();
    Metrics {
        final_error: s.last().map(|x| x.pos_err).unwrap_or(0.0),
        mean_error: s.iter().map(|x| x.pos_err).sum::<f64>() / n,
        steady_error: steady.iter().sum::<f64>() / steady.len().max(1) as f64,
        total_cost: trace.delta * s.iter().map(|x| x.stage_cost).sum::<f64>(),
        violation_count: s.iter().filter(|x| x.viol > 0).count(),
        mean_solve_latency_steps: s.iter().map(|x| x.solve_latency_steps as f64).sum::<f64>() / n,
    }
}
