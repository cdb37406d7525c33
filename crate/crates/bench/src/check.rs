//! Open-loop checks: linearization-bound soundness, the Monte Carlo test of
//! the predictive disturbed state set and the tube stability report.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tubempc::deviation::predict_state_set;
use tubempc::gains::{check_theorem2, reduce_to_joint_space, synthesize_tube_gains, Theorem2Report};
use tubempc::linearization::{
    discretize_zoh, disturbance_budget, excursion_envelopes, hessian_bound, linearize, DisturbanceBudget,
};
use tubempc::model::{
    dynamics_nominal, integrate_step, lipschitz_constants, sample_disturbance, ControlVector,
    DisturbanceVector, ManipulatorParams, StateVector,
};
use tubempc::sim::SimConfig;

/// Stability report evaluated at the literal disturbance bound.
pub const LITERAL_ETA: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationCheck {
    pub samples: usize,
    pub violations: usize,
    /// Largest `‖f − affine‖ / η2` seen.
    pub worst_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetCheck {
    pub m: usize,
    pub radius: f64,
    pub rollouts: usize,
    pub failures: usize,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub label: String,
    pub m: usize,
    pub eta: f64,
    pub l: f64,
    pub report: Theorem2Report,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub linearization: LinearizationCheck,
    pub sets: Vec<SetCheck>,
    pub stability: Vec<StabilityReport>,
    pub budget: DisturbanceBudget,
    /// Outcome of the gain synthesis on the full five-state pair.
    pub full_pair: String,
}

impl CheckReport {
    /// The hard checks: no linearization or set-membership failure.
    pub fn passed(&self) -> bool {
        self.linearization.violations == 0 && self.sets.iter().all(|s| s.failures == 0)
    }

    pub fn stability_holds(&self) -> bool {
        self.stability
            .iter()
            .all(|s| s.report.condition_i && s.report.condition_ii)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let lc = &self.linearization;
        let _ = writeln!(
            out,
            "linearization bound: {} samples, {} violations, worst ratio {:.6}",
            lc.samples, lc.violations, lc.worst_ratio
        );
        let b = &self.budget;
        let _ = writeln!(
            out,
            "disturbance budget at the initial state: eta1 = {:.6}, etaR = {:.6}, eta2 = {:.6}, eta = {:.6}",
            b.eta1, b.eta_r, b.eta2, b.eta
        );
        for s in &self.sets {
            let _ = writeln!(
                out,
                "state set m = {}: radius {:.6e}, {} rollouts, {} failures, max deviation {:.6e}",
                s.m, s.radius, s.rollouts, s.failures, s.max_deviation
            );
        }
        for s in &self.stability {
            let r = &s.report;
            let _ = writeln!(out, "stability report ({}): m = {}, eta = {:?}, l = {:?}", s.label, s.m, s.eta, s.l);
            let _ = writeln!(
                out,
                "  condition (ii): lhs = m*eta*(1+l)^m = {:?}, rhs = gamma = {:?}, holds: {}",
                r.lhs, r.rhs, r.condition_ii
            );
            let _ = writeln!(
                out,
                "  condition (i): spectral radius = {:?}, holds: {}",
                r.spectral_radius, r.condition_i
            );
            let eig: Vec<String> = r
                .eigenvalues
                .iter()
                .map(|(re, im)| format!("{re:.6}{im:+.6}i"))
                .collect();
            let _ = writeln!(out, "  eigenvalues: {}", eig.join(", "));
        }
        let _ = writeln!(out, "full five-state pair at rest: {}", self.full_pair);
        out
    }
}

fn random_theta<R: Rng>(rng: &mut R, params: &ManipulatorParams) -> [f64; 3] {
    std::array::from_fn(|i| rng.random_range(params.theta_lo[i]..=params.theta_hi[i]))
}

fn random_input<R: Rng>(rng: &mut R, params: &ManipulatorParams) -> ControlVector {
    ControlVector(Vector3::from_fn(|i, _| {
        rng.random_range(-params.omega_max[i]..=params.omega_max[i])
    }))
}

/// Uniform point of the closed unit 3-ball by rejection.
fn unit_ball3<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0));
        if v.norm() <= 1.0 {
            return v;
        }
    }
}

/// Samples operating points in the admissible box and perturbations inside
/// the excursion envelopes, and counts how often the affine model misses
/// the nominal field by more than `η2`.
pub fn check_linearization_bound(params: &ManipulatorParams, delta: f64, samples: usize, seed: u64) -> LinearizationCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lip = lipschitz_constants(params);
    let (dz, du) = excursion_envelopes(params, delta);
    let mut violations = 0;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..samples {
        let z0 = StateVector::from_angles(random_theta(&mut rng, params), params);
        let u0 = random_input(&mut rng, params);
        let model = linearize(&z0, &u0, params);
        let eta_r = hessian_bound(&z0, &u0, params, dz, du);
        let budget = disturbance_budget(&model, eta_r, dz, du, 0.0, lip.l1, lip.l2);
        // A radius-dz ball in R^5 is the same sampler as the disturbance one.
        let z = StateVector(z0.0 + sample_disturbance(&mut rng, dz).0);
        let u = ControlVector(u0.0 + unit_ball3(&mut rng) * du);
        let gap = (dynamics_nominal(&z, &u, params) - model.eval(&z, &u)).norm();
        if gap > budget.eta2 {
            violations += 1;
        }
        if budget.eta2 > 0.0 {
            worst_ratio = worst_ratio.max(gap / budget.eta2);
        }
    }
    LinearizationCheck {
        samples,
        violations,
        worst_ratio,
    }
}

/// For each horizon `m`, rolls the disturbed system from random feasible
/// states under random admissible inputs, with `‖e‖ ≤ eta` on every step,
/// and checks that the final state lies in the predicted ball of radius
/// `m·(δη)·(1+l)^m`.
pub fn check_state_sets(
    params: &ManipulatorParams,
    delta: f64,
    eta: f64,
    ms: &[usize],
    rollouts: usize,
    seed: u64,
) -> tubempc::Result<Vec<SetCheck>> {
    let mut params = params.clone();
    params.eta1 = eta;
    let l = lipschitz_constants(&params).l;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(ms.len());
    for &m in ms {
        let mut failures = 0;
        let mut max_deviation: f64 = 0.0;
        let mut radius = 0.0;
        for _ in 0..rollouts {
            let z0 = StateVector::from_angles(random_theta(&mut rng, &params), &params);
            let controls: Vec<ControlVector> = (0..m).map(|_| random_input(&mut rng, &params)).collect();
            let set = predict_state_set(&z0, &controls, m, delta * eta, l, &params, delta)?;
            radius = set.radius;
            let mut z = z0;
            for u in &controls {
                let e: DisturbanceVector = sample_disturbance(&mut rng, eta);
                z = integrate_step(&z, u, delta, Some(&e), &params)?;
            }
            max_deviation = max_deviation.max((z.0 - set.center.0).norm());
            if !set.contains(&z) {
                failures += 1;
            }
        }
        out.push(SetCheck {
            m,
            radius,
            rollouts,
            failures,
            max_deviation,
        });
    }
    Ok(out)
}

fn to_dmatrix<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_iterator(R, C, m.iter().copied())
}

/// Runs every check at the given configuration.
pub fn run_check(cfg: &SimConfig, seed: u64) -> tubempc::Result<CheckReport> {
    cfg.validate()?;
    let params = &cfg.params;
    let lip = lipschitz_constants(params);
    let linearization = check_linearization_bound(params, cfg.delta, 10_000, seed);
    let sets = check_state_sets(params, cfg.delta, LITERAL_ETA, &(1..=8).collect::<Vec<_>>(), 1000, seed)?;

    let z0 = StateVector::from_angles(cfg.initial_theta, params);
    let u0 = ControlVector::zeros();
    let model = discretize_zoh(&linearize(&z0, &u0, params), cfg.delta)?;
    let (dz, du) = excursion_envelopes(params, cfg.delta);
    let eta_r = hessian_bound(&z0, &u0, params, dz, du);
    let budget = disturbance_budget(&model, eta_r, dz, du, params.eta1, lip.l1, lip.l2);

    let red = reduce_to_joint_space(&model.b, cfg.delta, &cfg.q())?;
    let r = to_dmatrix(&cfg.r());
    let gains = synthesize_tube_gains(&red.ad, &red.bd, &red.q, &r)?;
    let eta_step = cfg.delta * budget.eta.min(cfg.eta);
    let stability = vec![
        StabilityReport {
            label: "literal bound".into(),
            m: cfg.m,
            eta: LITERAL_ETA,
            l: lip.l,
            report: check_theorem2(cfg.m, LITERAL_ETA, lip.l, &gains.acl),
        },
        StabilityReport {
            label: "closed-loop per-step bound".into(),
            m: cfg.m,
            eta: eta_step,
            l: lip.l,
            report: check_theorem2(cfg.m, eta_step, lip.l, &gains.acl),
        },
    ];

    let disc = model.discrete()?;
    let full_pair = match synthesize_tube_gains(&to_dmatrix(&disc.ad), &to_dmatrix(&disc.bd), &to_dmatrix(&cfg.q()), &r) {
        Ok(g) => format!("stabilizable, spectral radius {:.6}", g.spectral_radius),
        Err(e) => e.to_string(),
    };

    Ok(CheckReport {
        linearization,
        sets,
        stability,
        budget,
        full_pair,
    })
}
