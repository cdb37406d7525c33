//! Closed-loop episodes under the three execution strategies.

pub mod config;
pub mod episode;
pub mod task;
pub mod trace;

pub use config::{ControllerKind, SimConfig, Theorem2Policy};
pub use episode::{ancillary_control, run_episode, FeedbackGain};
pub use task::{reference_state, reference_trajectory, TaskKind, TaskSpec};
pub use trace::{metrics_summary, Metrics, Sample, SimTrace};
