//! Benchmark harness for the tube MPC toolkit: configuration, trace files,
//! the controller comparison and the open-loop checks.

pub mod check;
pub mod compare;
pub mod config;
pub mod trace;
