//! Bound on the gap between the disturbed and nominal trajectories and the
//! ball-shaped predictive set built from it.

use crate::error::{Error, Result};
use crate::model::{integrate_step, ControlVector, ManipulatorParams, StateVector};

/// `m·η·(1+l)^m`: worst-case Euclidean deviation after `m` steps when every
/// step adds at most `eta`.
pub fn deviation_bound(m: usize, eta: f64, l: f64) -> f64 {
    if m == 0 {
        return 0.0;
    }
    m as f64 * eta * (1.0 + l).powi(m as i32)
}

/// Ball around a nominal prediction that contains the real state `m` steps
/// ahead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbedStateSet {
    pub center: StateVector,
    pub radius: f64,
    pub steps_ahead: usize,
}

impl DisturbedStateSet {
    pub fn contains(&self, z: &StateVector) -> bool {
        (z.0 - self.center.0).norm() <= self.radius
    }
}

/// Nominal (disturbance-free) rollout of `controls[..m]` from `z_k`, with
/// radius [`deviation_bound`].
pub fn predict_state_set(
    z_k: &StateVector,
    controls: &[ControlVector],
    m: usize,
    eta: f64,
    l: f64,
    params: &ManipulatorParams,
    delta: f64,
) -> Result<DisturbedStateSet> {
    if controls.len() < m {
        return Err(Error::Dimension(format!(
            "need {m} controls for the prediction, got {}",
            controls.len()
        )));
    }
    let mut z = *z_k;
    for u in &controls[..m] {
        z = integrate_step(&z, u, delta, None, params)?;
    }
    Ok(DisturbedStateSet {
        center: z,
        radius: deviation_bound(m, eta, l),
        steps_ahead: m,
    })
}

/// Like [`predict_state_set`] but the input at each step comes from a policy
/// of the step index and the current predicted state.
pub fn predict_state_set_with<F>(
    z_k: &StateVector,
    m: usize,
    eta: f64,
    l: f64,
    params: &ManipulatorParams,
    delta: f64,
    mut policy: F,
) -> Result<DisturbedStateSet>
where
    F: FnMut(usize, &StateVector) -> ControlVector,
{
    let mut z = *z_k;
    for i in 0..m {
        let u = policy(i, &z);
        z = integrate_step(&z, &u, delta, None, params)?;
    }
    Ok(DisturbedStateSet {
        center: z,
        radius: deviation_bound(m, eta, l),
        steps_ahead: m,
    })
}
