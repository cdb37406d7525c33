use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector5;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum TaskKind {
    /// Drive the end point to a fixed target.
    PositionTracking { target: [f64; 2] },
    /// Follow a circular arc during the first half of the episode, then a
    /// straight line from the arc end to `line_end`, both at constant speed.
    TrajectoryTracking {
        arc_center: [f64; 2],
        arc_radius: f64,
        arc_start_angle: f64,
        arc_end_angle: f64,
        line_end: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub duration: f64,
}

impl TaskSpec {
    pub fn position(target: [f64; 2], duration: f64) -> Self {
        Self {
            kind: TaskKind::PositionTracking { target },
            duration,
        }
    }

    /// Benchmark position task: reach (2, 6) within 30 s.
    pub fn paper_position() -> Self {
        Self::position([2.0, 6.0], 30.0)
    }

    /// Benchmark trajectory task: the quarter circle of radius 2 about (2, 4)
    /// from (0, 4) to (2, 6), then a line to (3.5, 5.5).
    pub fn paper_trajectory() -> Self {
        Self {
            kind: TaskKind::TrajectoryTracking {
                arc_center: [2.0, 4.0],
                arc_radius: 2.0,
                arc_start_angle: PI,
                arc_end_angle: FRAC_PI_2,
                line_end: [3.5, 5.5],
            },
            duration: 30.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            TaskKind::PositionTracking { .. } => "position",
            TaskKind::TrajectoryTracking { .. } => "trajectory",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "task duration must be positive, got {}",
                self.duration
            )));
        }
        if let TaskKind::TrajectoryTracking { arc_radius, .. } = self.kind {
            if !(arc_radius.is_finite() && arc_radius > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "arc radius must be positive, got {arc_radius}"
                )));
            }
        }
        Ok(())
    }

    /// Point where the arc ends and the line starts.
    pub fn arc_end(&self) -> Option<[f64; 2]> {
        match self.kind {
            TaskKind::TrajectoryTracking {
                arc_center,
                arc_radius,
                arc_end_angle,
                ..
            } => Some([
                arc_center[0] + arc_radius * arc_end_angle.cos(),
                arc_center[1] + arc_radius * arc_end_angle.sin(),
            ]),
            TaskKind::PositionTracking { .. } => None,
        }
    }
}

/// Reference end-point position at time `t`.
pub fn reference_trajectory(task: &TaskSpec, t: f64) -> Result<[f64; 2]> {
    if !(0.0..=task.duration).contains(&t) {
        return Err(Error::TimeOutOfRange {
            t,
            duration: task.duration,
        });
    }
    Ok(match task.kind {
        TaskKind::PositionTracking { target } => target,
        TaskKind::TrajectoryTracking {
            arc_center,
            arc_radius,
            arc_start_angle,
            arc_end_angle,
            line_end,
        } => {
            let half = 0.5 * task.duration;
            if t <= half {
                let a = arc_start_angle + (arc_end_angle - arc_start_angle) * (t / half);
                [
                    arc_center[0] + arc_radius * a.cos(),
                    arc_center[1] + arc_radius * a.sin(),
                ]
            } else {
                let start = task.arc_end().expect("trajectory task");
                let s = (t - half) / half;
                [
                    start[0] + (line_end[0] - start[0]) * s,
                    start[1] + (line_end[1] - start[1]) * s,
                ]
            }
        }
    })
}

/// Reference lifted to the state space; the angle components are zero and
/// are normally removed from the cost by the mask.
pub fn reference_state(task: &TaskSpec, t: f64) -> Result<Vector5<f64>> {
    let [x, y] = reference_trajectory(task, t)?;
    Ok(Vector5::new(x, y, 0.0, 0.0, 0.0))
}
