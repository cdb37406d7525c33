use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix5, Vector3, Vector5};

use crate::error::{Error, Result};
use crate::model::{paper_initial_theta, ManipulatorParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ControllerKind {
    /// Solves from the measured state and applies the result in the same step.
    OptimalMpc,
    /// Solves from the measured state once per control period; the result is
    /// usable only `m` steps later and is held for a period.
    TimeTriggeredDelayedMpc,
    /// Plans one period ahead from a predicted state and tracks the plan with
    /// ancillary feedback.
    SmoothTubeMpc,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [
        ControllerKind::OptimalMpc,
        ControllerKind::TimeTriggeredDelayedMpc,
        ControllerKind::SmoothTubeMpc,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::OptimalMpc => "optimal",
            ControllerKind::TimeTriggeredDelayedMpc => "delayed",
            ControllerKind::SmoothTubeMpc => "smooth",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimal" => Ok(ControllerKind::OptimalMpc),
            "delayed" => Ok(ControllerKind::TimeTriggeredDelayedMpc),
            "smooth" => Ok(ControllerKind::SmoothTubeMpc),
            other => Err(Error::InvalidParameter(format!(
                "unknown controller `{other}` (expected optimal, delayed or smooth)"
            ))),
        }
    }
}

/// What to do when a relinearization fails the tube stability check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Theorem2Policy {
    Warn,
    Abort,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub params: ManipulatorParams,
    pub initial_theta: [f64; 3],
    /// Sampling step in seconds.
    pub delta: f64,
    /// Prediction horizon in seconds.
    pub horizon: f64,
    /// Steps per control period.
    pub m: usize,
    pub q_diag: [f64; 5],
    pub r_diag: [f64; 3],
    /// Cap on the total disturbance bound used by the tube.
    pub eta: f64,
    pub seed: u64,
    pub theorem2_policy: Theorem2Policy,
    /// Drop the angle components from the tracking error.
    pub cost_mask: bool,
    /// Terminal-set radius; derived from the tightened box when absent.
    pub epsilon: Option<f64>,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
}

impl SimConfig {
    /// `δ = 0.1 s`, `T = 3 s`, `m = 4`, `η = 0.02`, `Q = 0.1 I`, `R = 0.01 I`.
    pub fn paper() -> Self {
        Self {
            params: ManipulatorParams::paper(),
            initial_theta: paper_initial_theta(),
            delta: 0.1,
            horizon: 3.0,
            m: 4,
            q_diag: [0.1; 5],
            r_diag: [0.01; 3],
            eta: 0.02,
            seed: 0,
            theorem2_policy: Theorem2Policy::Warn,
            cost_mask: true,
            epsilon: None,
            solver_tol: 1e-8,
            solver_max_iter: 2000,
        }
    }

    pub fn horizon_steps(&self) -> usize {
        (self.horizon / self.delta).round() as usize
    }

    pub fn q(&self) -> Matrix5<f64> {
        Matrix5::from_diagonal(&Vector5::from(self.q_diag))
    }

    pub fn r(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.r_diag))
    }

    pub fn mask(&self) -> Vector5<f64> {
        if self.cost_mask {
            Vector5::new(1.0, 1.0, 0.0, 0.0, 0.0)
        } else {
            Vector5::repeat(1.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        let steps = self.horizon / self.delta;
        if !(steps.is_finite() && steps >= 1.0 - 1e-9 && (steps - steps.round()).abs() < 1e-6) {
            return Err(Error::InvalidParameter(format!(
                "horizon {} must be a positive multiple of delta {}",
                self.horizon, self.delta
            )));
        }
        if self.m == 0 {
            return Err(Error::InvalidParameter("m must be at least 1".into()));
        }
        if self.m as f64 * self.delta > self.horizon + 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "rule m*delta <= horizon violated: {} * {} > {}",
                self.m, self.delta, self.horizon
            )));
        }
        if self.q_diag.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
            return Err(Error::InvalidParameter("q_diag entries must be non-negative".into()));
        }
        if self.r_diag.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidParameter("r_diag entries must be positive".into()));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::InvalidParameter("eta must be non-negative".into()));
        }
        if let Some(eps) = self.epsilon {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(Error::InvalidParameter("epsilon must be positive".into()));
            }
        }
        if !(self.solver_tol > 0.0) || self.solver_max_iter == 0 {
            return Err(Error::InvalidParameter("solver tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}
