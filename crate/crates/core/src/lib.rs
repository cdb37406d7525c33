//! Robust tube-based smooth MPC for a planar three-link manipulator.
//!
//! The crate is organised bottom-up: [`model`] holds the kinematics,
//! [`linearization`] builds certified affine models, [`deviation`] bounds the
//! real-vs-nominal gap, [`gains`] synthesises the tube feedback, [`ocp`]
//! solves the receding-horizon problems and [`sim`] runs closed-loop episodes.

pub mod deviation;
pub mod error;
pub mod gains;
pub mod linearization;
pub mod model;
pub mod ocp;
pub mod sim;

pub use error::{Error, Result};
