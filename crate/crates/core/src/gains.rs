//! Tube feedback gains, the disturbance-invariant radius and constraint
//! tightening.

use nalgebra::{Complex, DMatrix, Matrix3, Matrix3x5, Matrix5, Matrix5x3};

use crate::deviation::deviation_bound;
use crate::error::{Error, Result};
use crate::model::ManipulatorParams;

const SDA_MAX_ITER: usize = 100;
const RICCATI_TOL: f64 = 1e-10;
const LYAPUNOV_TOL: f64 = 1e-8;

/// LQR gain `K`, Riccati solution `P`, `Q* = Q + KᵀRK` and the closed loop
/// `Acl = Ad + Bd K`.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeGains {
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub qstar: DMatrix<f64>,
    pub acl: DMatrix<f64>,
    pub spectral_radius: f64,
    pub riccati_residual: f64,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    m.complex_eigenvalues().iter().copied().collect()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|c| c.norm()).fold(0.0, f64::max)
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

fn check_square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Dimension(format!(
            "{name} is {}x{}, expected {n}x{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// PBH test: every eigenvalue of `A` on or outside the unit circle must be
/// controllable, i.e. `[A − λI, B]` has full row rank.
pub fn check_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    let scale = a.norm().max(b.norm()).max(1.0);
    for lambda in eigenvalues(a) {
        if lambda.norm() < 1.0 - 1e-9 {
            continue;
        }
        let mut pbh = DMatrix::<Complex<f64>>::zeros(n, n + b.ncols());
        for r in 0..n {
            for c in 0..n {
                pbh[(r, c)] = Complex::new(a[(r, c)], 0.0);
            }
            pbh[(r, r)] -= lambda;
            for c in 0..b.ncols() {
                pbh[(r, n + c)] = Complex::new(b[(r, c)], 0.0);
            }
        }
        let sv = pbh.singular_values();
        let rank = sv.iter().filter(|&&s| s > 1e-9 * scale).count();
        if rank < n {
            return Err(Error::NotStabilizable {
                re: lambda.re,
                im: lambda.im,
            });
        }
    }
    Ok(())
}

fn dare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let Some(s_inv) = s.try_inverse() else {
        return f64::INFINITY;
    };
    let at_p = a.transpose() * p;
    let rhs = &at_p * a - &at_p * b * s_inv * &bt_p * a + q;
    (p - rhs).amax() / p.amax().max(1.0)
}

/// Infinite-horizon discrete LQR for `(Ad, Bd, Q, R)`.
///
/// The Riccati equation is solved with the structured doubling algorithm and
/// the result is checked against the equation and the Lyapunov inequality
/// `AclᵀPAcl − P + Q* ⪯ 0`.
pub fn synthesize_tube_gains(
    ad: &DMatrix<f64>,
    bd: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<TubeGains> {
    let n = ad.nrows();
    let m = bd.ncols();
    check_square("Ad", ad, n)?;
    check_square("Q", q, n)?;
    check_square("R", r, m)?;
    if bd.nrows() != n {
        return Err(Error::Dimension(format!(
            "Bd has {} rows, expected {n}",
            bd.nrows()
        )));
    }
    if q.symmetric_eigenvalues().min() < -1e-12 * q.amax().max(1.0) {
        return Err(Error::InvalidParameter("Q must be positive semi-definite".into()));
    }
    let Some(r_chol) = r.clone().cholesky() else {
        return Err(Error::InvalidParameter("R must be positive definite".into()));
    };
    check_stabilizable(ad, bd)?;

    let r_inv = r_chol.inverse();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut ak = ad.clone();
    let mut gk = bd * &r_inv * bd.transpose();
    let mut hk = q.clone();
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..SDA_MAX_ITER {
        iterations = it + 1;
        let w = &eye + &gk * &hk;
        let lu_w = w.lu();
        let w_inv_a = lu_w.solve(&ak).ok_or(Error::RiccatiNonConvergence {
            iterations,
            residual: f64::INFINITY,
        })?;
        let w_inv_g = lu_w.solve(&gk).ok_or(Error::RiccatiNonConvergence {
            iterations,
            residual: f64::INFINITY,
        })?;
        let a_next = &ak * &w_inv_a;
        let g_next = &gk + &ak * w_inv_g * ak.transpose();
        let h_next = &hk + ak.transpose() * &hk * &w_inv_a;
        let change = (&h_next - &hk).amax();
        ak = a_next;
        gk = (&g_next + g_next.transpose()) * 0.5;
        hk = (&h_next + h_next.transpose()) * 0.5;
        if !hk.iter().all(|v| v.is_finite()) {
            break;
        }
        if change <= 1e-15 * hk.amax().max(1.0) {
            converged = true;
            break;
        }
    }
    let p = hk;
    let residual = dare_residual(ad, bd, q, r, &p);
    if !converged || !(residual < RICCATI_TOL) {
        return Err(Error::RiccatiNonConvergence {
            iterations,
            residual,
        });
    }

    let bt_p = bd.transpose() * &p;
    let s = r + &bt_p * bd;
    let k = -(s
        .cholesky()
        .ok_or(Error::RiccatiNonConvergence {
            iterations,
            residual,
        })?
        .solve(&(&bt_p * ad)));
    let acl = ad + bd * &k;
    let qstar = q + k.transpose() * r * &k;
    let rho = spectral_radius(&acl);
    if rho >= 1.0 {
        return Err(Error::UnstableClosedLoop(rho));
    }
    let lyap = acl.transpose() * &p * &acl - &p + &qstar;
    let lyap = (&lyap + lyap.transpose()) * 0.5;
    let worst = lyap.symmetric_eigenvalues().max();
    if worst > LYAPUNOV_TOL * p.amax().max(1.0) {
        return Err(Error::Certificate(format!(
            "Lyapunov residual eigenvalue {worst:e} exceeds tolerance"
        )));
    }
    Ok(TubeGains {
        k,
        p,
        qstar,
        acl,
        spectral_radius: rho,
        riccati_residual: residual,
        gamma: None,
        epsilon: None,
    })
}

/// `γ = Σ_{i≥0} ‖Acl^i‖₂·η`, truncated once a term falls below `1e-12·η`.
pub fn invariant_radius(acl: &DMatrix<f64>, eta: f64) -> Result<f64> {
    let rho = spectral_radius(acl);
    if rho >= 1.0 {
        return Err(Error::UnstableClosedLoop(rho));
    }
    if eta == 0.0 {
        return Ok(0.0);
    }
    let n = acl.nrows();
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut sum = 0.0;
    // ‖Acl^i‖ ≤ C·ρ^i eventually, so the cap only guards against ρ ≈ 1.
    for _ in 0..1_000_000 {
        let term = spectral_norm(&power);
        sum += term;
        if term < 1e-12 {
            return Ok(sum * eta);
        }
        power = &power * acl;
    }
    Err(Error::UnstableClosedLoop(rho))
}

/// Per-step tightened bounds for the nominal prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct TightenedSets {
    /// Tightened joint bounds for prediction steps `0..=N`.
    pub theta_lo: Vec<[f64; 3]>,
    pub theta_hi: Vec<[f64; 3]>,
    /// Shrink radius used at each step.
    pub radius: Vec<f64>,
    pub feasible: Vec<bool>,
    pub omega_lo: [f64; 3],
    pub omega_hi: [f64; 3],
    pub input_margin: f64,
    pub input_feasible: bool,
}

impl TightenedSets {
    pub fn horizon(&self) -> usize {
        self.theta_lo.len().saturating_sub(1)
    }

    pub fn first_infeasible_step(&self) -> Option<usize> {
        self.feasible.iter().position(|&f| !f)
    }
}

/// Joint bounds at step `i` shrink by `min(i·η(1+l)^i, γ)`; the input box
/// shrinks by `‖K‖₂·γ`. Empty intervals are flagged, not clamped.
pub fn tighten_constraints(
    params: &ManipulatorParams,
    gamma: f64,
    k_norm: f64,
    horizon_steps: usize,
    eta: f64,
    l: f64,
) -> TightenedSets {
    let mut out = TightenedSets {
        theta_lo: Vec::with_capacity(horizon_steps + 1),
        theta_hi: Vec::with_capacity(horizon_steps + 1),
        radius: Vec::with_capacity(horizon_steps + 1),
        feasible: Vec::with_capacity(horizon_steps + 1),
        omega_lo: [0.0; 3],
        omega_hi: [0.0; 3],
        input_margin: k_norm * gamma,
        input_feasible: true,
    };
    for i in 0..=horizon_steps {
        let r = deviation_bound(i, eta, l).min(gamma);
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        let mut ok = true;
        for j in 0..3 {
            lo[j] = params.theta_lo[j] + r;
            hi[j] = params.theta_hi[j] - r;
            ok &= lo[j] <= hi[j];
        }
        out.theta_lo.push(lo);
        out.theta_hi.push(hi);
        out.radius.push(r);
        out.feasible.push(ok);
    }
    for j in 0..3 {
        out.omega_lo[j] = -params.omega_max[j] + out.input_margin;
        out.omega_hi[j] = params.omega_max[j] - out.input_margin;
        out.input_feasible &= out.omega_lo[j] <= out.omega_hi[j];
    }
    out
}

/// Numeric check of the two hypotheses of the tube stability result.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Report {
    /// `ρ(Acl) < 1`.
    pub condition_i: bool,
    /// `m·η·(1+l)^m ≤ γ(Acl, η)`.
    pub condition_ii: bool,
    pub lhs: f64,
    /// `γ`, infinite when the closed loop is not Schur stable.
    pub rhs: f64,
    pub spectral_radius: f64,
    pub eigenvalues: Vec<(f64, f64)>,
}

pub fn check_theorem2(m: usize, eta: f64, l: f64, acl: &DMatrix<f64>) -> Theorem2Report {
    let eig = eigenvalues(acl);
    let rho = eig.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let lhs = deviation_bound(m, eta, l);
    let rhs = invariant_radius(acl, eta).unwrap_or(f64::INFINITY);
    Theorem2Report {
        condition_i: rho < 1.0,
        condition_ii: rho < 1.0 && lhs <= rhs,
        lhs,
        rhs,
        spectral_radius: rho,
        eigenvalues: eig.iter().map(|c| (c.re, c.im)).collect(),
    }
}

/// Joint-space part of a ZOH manipulator model.
///
/// The angle rows of the kinematics are pure integrators, so over one step
/// `θ⁺ = θ + δ u` exactly. The position rows only add directions the inputs
/// cannot steer independently of the angles, which is why the tube feedback
/// is designed on the angles and lifted back through the input map.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSpaceReduction {
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Left inverse `B⁺ = (BᵀB)⁻¹Bᵀ` of the continuous input map.
    pub b_pinv: Matrix3x5<f64>,
}

/// Reduced pair `(I, δI)` with the state weight pulled back through `B`.
pub fn reduce_to_joint_space(
    b: &Matrix5x3<f64>,
    delta: f64,
    q: &Matrix5<f64>,
) -> Result<JointSpaceReduction> {
    let btb: Matrix3<f64> = b.transpose() * b;
    let inv = btb
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("input map is rank deficient".into()))?;
    let b_pinv = inv * b.transpose();
    let q_r: Matrix3<f64> = b.transpose() * q * b;
    Ok(JointSpaceReduction {
        ad: DMatrix::identity(3, 3),
        bd: DMatrix::identity(3, 3) * delta,
        q: DMatrix::from_iterator(3, 3, q_r.iter().copied()),
        b_pinv,
    })
}

/// `K_z = K_r B⁺`: a full-state deviation is mapped to its least-squares
/// joint equivalent before the joint gain acts on it.
pub fn lift_gain(k_r: &DMatrix<f64>, reduction: &JointSpaceReduction) -> nalgebra::SMatrix<f64, 3, 5> {
    let k = nalgebra::SMatrix::<f64, 3, 3>::from_iterator(k_r.iter().copied());
    k * reduction.b_pinv
}

/// `P_z = B⁺ᵀ P_r B⁺`.
pub fn lift_weight(p_r: &DMatrix<f64>, reduction: &JointSpaceReduction) -> Matrix5<f64> {
    let p = Matrix3::from_iterator(p_r.iter().copied());
    reduction.b_pinv.transpose() * p * reduction.b_pinv
}
