//! Affine models of the kinematics around an operating point and the
//! certified bound on their error.

use nalgebra::{DMatrix, Matrix5, Matrix5x3, SMatrix, Vector5};

use crate::error::{Error, Result};
use crate::model::{dynamics_nominal, velocity_map, ControlVector, ManipulatorParams, StateVector};

/// Zero-order-hold transcription of a [`LinearModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub ad: Matrix5<f64>,
    pub bd: Matrix5x3<f64>,
    pub omegad: Vector5<f64>,
    pub delta: f64,
}

/// `ż ≈ A z + B u + Ω` around `(z0, u0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: Matrix5<f64>,
    pub b: Matrix5x3<f64>,
    pub omega: Vector5<f64>,
    pub z0: StateVector,
    pub u0: ControlVector,
    pub discrete: Option<DiscreteModel>,
}

impl LinearModel {
    /// Continuous affine prediction `A z + B u + Ω`.
    pub fn eval(&self, z: &StateVector, u: &ControlVector) -> Vector5<f64> {
        self.a * z.0 + self.b * u.0 + self.omega
    }

    pub fn discrete(&self) -> Result<&DiscreteModel> {
        self.discrete
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("model has not been discretized".into()))
    }
}

pub fn linearize(z0: &StateVector, u0: &ControlVector, params: &ManipulatorParams) -> LinearModel {
    let theta = z0.theta();
    let mut a = Matrix5::zeros();
    for i in 0..3 {
        let l = params.link_lengths[i];
        let (s, c) = theta[i].sin_cos();
        let w = u0.0[i];
        a[(0, 2 + i)] = -w * l * c;
        a[(1, 2 + i)] = -w * l * s;
    }
    let b = velocity_map(theta, params);
    let f = dynamics_nominal(z0, u0, params);
    let omega = f - (a * z0.0 + b * u0.0);
    LinearModel {
        a,
        b,
        omega,
        z0: *z0,
        u0: *u0,
        discrete: None,
    }
}

/// Frobenius norm bound of the second-derivative tensor of the kinematics
/// over `‖z − z0‖ ≤ box_radius_z`, `‖u − u0‖ ≤ box_radius_u`.
///
/// The only nonzero second partials are `∂²/∂θ_i²` (magnitude `L_i|ω_i|`)
/// and the two mixed `∂²/∂θ_i∂ω_i` (magnitude `L_i`), each split over the
/// x and y rows by `sin`/`cos`. Summing squares removes the angle, so the
/// bound is `sqrt(Σ L_i²((|ω_i| + r_u)² + 2))`; it is exact when `r_u = 0`.
/// The Frobenius norm dominates the operator norm, so the bound is sound.
pub fn hessian_bound(
    _z0: &StateVector,
    u0: &ControlVector,
    params: &ManipulatorParams,
    _box_radius_z: f64,
    box_radius_u: f64,
) -> f64 {
    let r_u = box_radius_u.max(0.0);
    (0..3)
        .map(|i| {
            let l = params.link_lengths[i];
            let w = u0.0[i].abs() + r_u;
            l * l * (w * w + 2.0)
        })
        .sum::<f64>()
        .sqrt()
}

/// Total disturbance bound `η = η1 + η2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceBudget {
    pub eta1: f64,
    pub eta_r: f64,
    pub eta2: f64,
    pub eta: f64,
}

/// `η2 = ‖Ω‖ + η_R (l1 Δz + l2 Δu)`, `η = η1 + η2`.
pub fn disturbance_budget(
    model: &LinearModel,
    eta_r: f64,
    dz_max: f64,
    du_max: f64,
    eta1: f64,
    l1: f64,
    l2: f64,
) -> DisturbanceBudget {
    let eta2 = model.omega.norm() + eta_r * (l1 * dz_max + l2 * du_max);
    DisturbanceBudget {
        eta1,
        eta_r,
        eta2,
        eta: eta1 + eta2,
    }
}

/// Default excursion envelopes for a control period: the state travel in one
/// step of length `delta` under any admissible input, and the diameter of the
/// input box.
pub fn excursion_envelopes(params: &ManipulatorParams, delta: f64) -> (f64, f64) {
    let speed: f64 = (0..3)
        .map(|i| {
            let l = params.link_lengths[i];
            params.omega_max[i] * (l * l + 1.0).sqrt()
        })
        .sum();
    let diameter = 2.0
        * params
            .omega_max
            .iter()
            .map(|w| w * w)
            .sum::<f64>()
            .sqrt();
    (delta * speed, diameter)
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
/// The scaled matrix has norm at most 1/2, and its series is summed until a
/// term drops below machine precision relative to the partial sum, which
/// leaves a tail far under `1e-12`.
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Dimension(format!("expm of {}x{} matrix", n, m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::SeriesNonConvergence);
    }
    let norm = m.norm();
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let scaled = m / 2f64.powi(squarings as i32);
    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    for k in 1..=60 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if term.norm() <= f64::EPSILON * sum.norm() {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SeriesNonConvergence);
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    Ok(sum)
}

/// Exact ZOH transcription of the affine model through the augmented
/// exponential `exp([[A, B, Ω], [0, 0, 0]]·δ)`.
pub fn discretize_zoh(model: &LinearModel, delta: f64) -> Result<LinearModel> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "discretization step must be positive, got {delta}"
        )));
    }
    let mut aug = DMatrix::<f64>::zeros(9, 9);
    aug.view_mut((0, 0), (5, 5)).copy_from(&model.a);
    aug.view_mut((0, 5), (5, 3)).copy_from(&model.b);
    aug.view_mut((0, 8), (5, 1)).copy_from(&model.omega);
    let e = expm(&(aug * delta))?;
    let ad: Matrix5<f64> = e.fixed_view::<5, 5>(0, 0).into_owned();
    let bd: Matrix5x3<f64> = e.fixed_view::<5, 3>(0, 5).into_owned();
    let omegad: SMatrix<f64, 5, 1> = e.fixed_view::<5, 1>(0, 8).into_owned();
    let mut out = model.clone();
    out.discrete = Some(DiscreteModel {
        ad,
        bd,
        omegad,
        delta,
    });
    Ok(out)
}

impl DiscreteModel {
    /// One step of `z⁺ = Ad z + Bd u + Ωd`.
    pub fn step(&self, z: &Vector5<f64>, u: &nalgebra::Vector3<f64>) -> Vector5<f64> {
        self.ad * z + self.bd * u + self.omegad
    }
}
