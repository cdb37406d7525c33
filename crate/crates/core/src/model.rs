//! Planar three-link manipulator kinematics.
//!
//! The state is `z = (x, y, θ1, θ2, θ3)`: the end-point position followed by
//! the absolute link angles measured counter-clockwise from the positive
//! x-axis. The inputs are the three link angular velocities, so the nominal
//! vector field is `ż = T(θ)·u` with
//!
//! ```text
//!        [ -L1 sin θ1  -L2 sin θ2  -L3 sin θ3 ]
//!        [  L1 cos θ1   L2 cos θ2   L3 cos θ3 ]
//! T(θ) = [      1           0           0     ]
//!        [      0           1           0     ]
//!        [      0           0           1     ]
//! ```

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix5x3, Vector2, Vector3, Vector5};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// End-point position plus absolute joint angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector(pub Vector5<f64>);

/// Joint angular velocities in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlVector(pub Vector3<f64>);

/// Additive disturbance on `ż`, held constant over one sampling step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceVector(pub Vector5<f64>);

impl StateVector {
    pub fn new(x: f64, y: f64, theta: [f64; 3]) -> Self {
        Self(Vector5::new(x, y, theta[0], theta[1], theta[2]))
    }

    /// A state whose position is consistent with the given angles.
    pub fn from_angles(theta: [f64; 3], params: &ManipulatorParams) -> Self {
        let (x, y) = forward_kinematics(theta, params);
        Self::new(x, y, theta)
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.0[0], self.0[1])
    }

    pub fn theta(&self) -> [f64; 3] {
        [self.0[2], self.0[3], self.0[4]]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl ControlVector {
    pub fn new(omega1: f64, omega2: f64, omega3: f64) -> Self {
        Self(Vector3::new(omega1, omega2, omega3))
    }

    pub fn zeros() -> Self {
        Self(Vector3::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl DisturbanceVector {
    pub fn zeros() -> Self {
        Self(Vector5::zeros())
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

/// Link lengths, joint/velocity limits and the additive disturbance bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ManipulatorParams {
    pub link_lengths: [f64; 3],
    pub theta_lo: [f64; 3],
    pub theta_hi: [f64; 3],
    pub omega_max: [f64; 3],
    pub eta1: f64,
}

impl ManipulatorParams {
    pub fn new(
        link_lengths: [f64; 3],
        theta_lo: [f64; 3],
        theta_hi: [f64; 3],
        omega_max: [f64; 3],
        eta1: f64,
    ) -> Result<Self> {
        let params = Self {
            link_lengths,
            theta_lo,
            theta_hi,
            omega_max,
            eta1,
        };
        params.validate()?;
        Ok(params)
    }

    /// The arm used in the benchmark: `L = (√5, √5, √10)`, joint limits
    /// `π/2 ≤ θ1 ≤ π`, `0 ≤ θ2 ≤ π`, `0 ≤ θ3 ≤ π/2`, `|ω_i| ≤ π/16`.
    pub fn paper() -> Self {
        let s5 = 5f64.sqrt();
        Self {
            link_lengths: [s5, s5, 10f64.sqrt()],
            theta_lo: [FRAC_PI_2, 0.0, 0.0],
            theta_hi: [PI, PI, FRAC_PI_2],
            omega_max: [PI / 16.0; 3],
            eta1: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            let l = self.link_lengths[i];
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "link length L{} must be positive, got {l}",
                    i + 1
                )));
            }
            if !(self.theta_lo[i].is_finite()
                && self.theta_hi[i].is_finite()
                && self.theta_lo[i] < self.theta_hi[i])
            {
                return Err(Error::InvalidParameter(format!(
                    "joint {} bounds must satisfy lo < hi, got [{}, {}]",
                    i + 1,
                    self.theta_lo[i],
                    self.theta_hi[i]
                )));
            }
            if !(self.omega_max[i].is_finite() && self.omega_max[i] > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "omega_max{} must be positive, got {}",
                    i + 1,
                    self.omega_max[i]
                )));
            }
        }
        if !(self.eta1.is_finite() && self.eta1 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eta1 must be non-negative, got {}",
                self.eta1
            )));
        }
        Ok(())
    }
}

/// Initial joint angles of the benchmark arm; the end point starts at (0, 4).
pub fn paper_initial_theta() -> [f64; 3] {
    [
        FRAC_PI_2 + (2.0 / 5f64.sqrt()).asin(),
        FRAC_PI_2 + (1.0 / 5f64.sqrt()).asin(),
        (1.0 / 10f64.sqrt()).asin(),
    ]
}

pub fn paper_initial_state() -> StateVector {
    StateVector::from_angles(paper_initial_theta(), &ManipulatorParams::paper())
}

/// The 5×3 input matrix `T(θ)`.
pub fn velocity_map(theta: [f64; 3], params: &ManipulatorParams) -> Matrix5x3<f64> {
    let mut t = Matrix5x3::zeros();
    for i in 0..3 {
        let l = params.link_lengths[i];
        let (s, c) = theta[i].sin_cos();
        t[(0, i)] = -l * s;
        t[(1, i)] = l * c;
        t[(2 + i, i)] = 1.0;
    }
    t
}

/// `ż = T(θ)·u`.
pub fn dynamics_nominal(
    z: &StateVector,
    u: &ControlVector,
    params: &ManipulatorParams,
) -> Vector5<f64> {
    velocity_map(z.theta(), params) * u.0
}

fn field(z: &Vector5<f64>, u: &Vector3<f64>, params: &ManipulatorParams) -> Vector5<f64> {
    velocity_map([z[2], z[3], z[4]], params) * u
}

/// One fixed RK4 step of the nominal field with `u` held, followed by the
/// additive disturbance `δ·e`.
pub fn integrate_step(
    z: &StateVector,
    u: &ControlVector,
    delta: f64,
    e: Option<&DisturbanceVector>,
    params: &ManipulatorParams,
) -> Result<StateVector> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "step must be positive, got {delta}"
        )));
    }
    let z0 = &z.0;
    let k1 = field(z0, &u.0, params);
    let k2 = field(&(z0 + k1 * (0.5 * delta)), &u.0, params);
    let k3 = field(&(z0 + k2 * (0.5 * delta)), &u.0, params);
    let k4 = field(&(z0 + k3 * delta), &u.0, params);
    let mut next = z0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (delta / 6.0);
    if let Some(e) = e {
        let norm = e.norm();
        if norm > params.eta1 * (1.0 + 1e-12) + f64::MIN_POSITIVE {
            return Err(Error::DisturbanceOutOfBounds {
                norm,
                bound: params.eta1,
            });
        }
        next += e.0 * delta;
    }
    let next = StateVector(next);
    if !next.is_finite() {
        return Err(Error::NonFiniteState);
    }
    Ok(next)
}

/// End-point position implied by the absolute link angles.
pub fn forward_kinematics(theta: [f64; 3], params: &ManipulatorParams) -> (f64, f64) {
    let mut x = 0.0;
    let mut y = 0.0;
    for i in 0..3 {
        let (s, c) = theta[i].sin_cos();
        x += params.link_lengths[i] * c;
        y += params.link_lengths[i] * s;
    }
    (x, y)
}

/// Lipschitz constants of the kinematics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzConstants {
    /// With respect to the state: `max L_i`.
    pub l1: f64,
    /// With respect to the input.
    pub l2: f64,
    /// `l1 + 1`, the constant of `g(z, u) = f(z, u) − z` used in the
    /// deviation bound.
    pub l: f64,
}

pub fn lipschitz_constants(params: &ManipulatorParams) -> LipschitzConstants {
    let l1 = params
        .link_lengths
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    LipschitzConstants {
        l1,
        l2: 1.0,
        l: l1 + 1.0,
    }
}

/// Uniform draw from the closed 5-ball of radius `eta1`.
pub fn sample_disturbance<R: Rng + ?Sized>(rng: &mut R, eta1: f64) -> DisturbanceVector {
    if eta1 <= 0.0 {
        return DisturbanceVector::zeros();
    }
    let dir = loop {
        let g = Vector5::from_fn(|_, _| StandardNormal.sample(rng));
        let n: f64 = g.norm();
        if n > 1e-12 {
            break g / n;
        }
    };
    let u: f64 = rng.random::<f64>();
    let r = (eta1 * u.powf(0.2)).min(eta1);
    DisturbanceVector(dir * r)
}

/// Per-component constraint status. A margin is the signed distance to the
/// nearest bound, negative when the bound is violated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintReport {
    pub theta_ok: [bool; 3],
    pub theta_margin: [f64; 3],
    pub omega_ok: [bool; 3],
    pub omega_margin: [f64; 3],
}

impl ConstraintReport {
    pub fn feasible(&self) -> bool {
        self.theta_ok.iter().chain(self.omega_ok.iter()).all(|&ok| ok)
    }

    pub fn violation_count(&self) -> usize {
        self.theta_ok
            .iter()
            .chain(self.omega_ok.iter())
            .filter(|&&ok| !ok)
            .count()
    }
}

pub fn check_constraints(
    z: &StateVector,
    u: &ControlVector,
    params: &ManipulatorParams,
) -> ConstraintReport {
    let theta = z.theta();
    let mut report = ConstraintReport {
        theta_ok: [true; 3],
        theta_margin: [0.0; 3],
        omega_ok: [true; 3],
        omega_margin: [0.0; 3],
    };
    for i in 0..3 {
        let m = (theta[i] - params.theta_lo[i]).min(params.theta_hi[i] - theta[i]);
        report.theta_margin[i] = m;
        report.theta_ok[i] = m >= 0.0;
        let w = params.omega_max[i] - u.0[i].abs();
        report.omega_margin[i] = w;
        report.omega_ok[i] = w >= 0.0;
    }
    report
}
