use std::time::Instant;

use nalgebra::{DMatrix, Matrix5, SMatrix, Vector5};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::deviation::{deviation_bound, DisturbedStateSet};
use crate::error::{Error, Result};
use crate::gains::{
    check_theorem2, invariant_radius, lift_gain, lift_weight, reduce_to_joint_space, spectral_norm,
    synthesize_tube_gains, tighten_constraints, Theorem2Report, TightenedSets,
};
use crate::linearization::{
    discretize_zoh, disturbance_budget, excursion_envelopes, hessian_bound, linearize, LinearModel,
};
use crate::model::{
    check_constraints, integrate_step, lipschitz_constants, sample_disturbance, ControlVector,
    DisturbanceVector, LipschitzConstants, StateVector,
};
use crate::ocp::condense::{CostWeights, InitialCondition, OcpSpec};
use crate::ocp::solve::{rollout, solve_ocp, solve_ocp1_baseline, OcpSolution};
use crate::sim::config::{ControllerKind, SimConfig, Theorem2Policy};
use crate::sim::task::{reference_state, TaskSpec};
use crate::sim::trace::{Sample, SimTrace};

pub type FeedbackGain = SMatrix<f64, 3, 5>;

/// `u = v + K (z − z*)`.
pub fn ancillary_control(
    v: &ControlVector,
    z: &StateVector,
    z_star: &StateVector,
    k: &FeedbackGain,
) -> ControlVector {
    ControlVector(v.0 + k * (z.0 - z_star.0))
}

/// Tube ingredients computed at one linearization.
#[derive(Debug, Clone)]
pub struct TubeDesign {
    pub k_z: FeedbackGain,
    pub p_term: Matrix5<f64>,
    pub gamma: f64,
    /// Per-step disturbance bound used for the tube.
    pub eta_step: f64,
    pub epsilon: f64,
    pub tightened: TightenedSets,
    pub report: Theorem2Report,
}

struct Episode<'a> {
    cfg: &'a SimConfig,
    task: &'a TaskSpec,
    steps: usize,
    horizon: usize,
    lip: LipschitzConstants,
}

impl Episode<'_> {
    fn reference(&self, step: usize) -> Result<Vector5<f64>> {
        let t = (step as f64 * self.cfg.delta).min(self.task.duration);
        reference_state(self.task, t)
    }

    fn references_from(&self, start: usize) -> Result<Vec<Vector5<f64>>> {
        (0..=self.horizon).map(|i| self.reference(start + i)).collect()
    }

    fn design(&self, model: &LinearModel, input_tightening: bool) -> Result<TubeDesign> {
        let cfg = self.cfg;
        let params = &cfg.params;
        let reduction = reduce_to_joint_space(&model.b, cfg.delta, &cfg.q())?;
        let r = DMatrix::from_iterator(3, 3, cfg.r().iter().copied());
        let gains = synthesize_tube_gains(&reduction.ad, &reduction.bd, &reduction.q, &r)?;
        let k_z = lift_gain(&gains.k, &reduction);
        let p_term = lift_weight(&gains.p, &reduction);

        let (dz, du) = excursion_envelopes(params, cfg.delta);
        let eta_r = hessian_bound(&model.z0, &model.u0, params, dz, du);
        let budget = disturbance_budget(model, eta_r, dz, du, params.eta1, self.lip.l1, self.lip.l2);
        let eta_step = cfg.delta * budget.eta.min(cfg.eta);
        let gamma = invariant_radius(&gains.acl, eta_step)?;
        let k_norm = if input_tightening {
            spectral_norm(&DMatrix::from_iterator(3, 5, k_z.iter().copied()))
        } else {
            0.0
        };
        let tightened = tighten_constraints(params, gamma, k_norm, self.horizon, eta_step, self.lip.l);
        let epsilon = match cfg.epsilon {
            Some(e) => e,
            None => {
                let p_inv = gains
                    .p
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| Error::Certificate("terminal weight is singular".into()))?;
                let n = self.horizon;
                (0..3)
                    .map(|j| {
                        let half = 0.5 * (tightened.theta_hi[n][j] - tightened.theta_lo[n][j]);
                        half.max(0.0) / p_inv[(j, j)].sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            }
        };
        let report = check_theorem2(cfg.m, eta_step, self.lip.l, &gains.acl);
        Ok(TubeDesign {
            k_z,
            p_term,
            gamma,
            eta_step,
            epsilon,
            tightened,
            report,
        })
    }

    fn spec(&self, design: &TubeDesign, initial: InitialCondition, z_ref: Vec<Vector5<f64>>) -> OcpSpec {
        let cfg = self.cfg;
        OcpSpec {
            horizon: self.horizon,
            models: Vec::new(),
            weights: CostWeights {
                delta: cfg.delta,
                q: cfg.q(),
                r: cfg.r(),
                p: design.p_term,
                mask: cfg.mask(),
            },
            terminal_scale: 1.0,
            tightened: design.tightened.clone(),
            initial,
            z_ref,
            epsilon: design.epsilon,
            tol: cfg.solver_tol,
            max_iter: cfg.solver_max_iter,
        }
    }

    fn stage_cost(&self, z: &StateVector, u: &ControlVector, z_ref: &Vector5<f64>) -> f64 {
        let e = (z.0 - z_ref).component_mul(&self.cfg.mask());
        e.dot(&(self.cfg.q() * e)) + u.0.dot(&(self.cfg.r() * u.0))
    }
}

/// A decision sequence with its nominal trajectory, valid from `start`.
#[derive(Debug, Clone)]
struct Plan {
    start: usize,
    v: Vec<ControlVector>,
    z_star: Vec<StateVector>,
    k_z: FeedbackGain,
    gamma: f64,
    source_step: usize,
    latency: usize,
}

impl Plan {
    fn control(&self, step: usize, z: &StateVector) -> (ControlVector, ControlVector, StateVector) {
        let i = step - self.start;
        let v = self.v[i.min(self.v.len() - 1)];
        let zs = self.z_star[i.min(self.z_star.len() - 1)];
        (ancillary_control(&v, z, &zs, &self.k_z), v, zs)
    }
}

struct Applied {
    u: ControlVector,
    v: ControlVector,
    z_star: StateVector,
    latency: usize,
    source: Option<usize>,
    gamma: Option<f64>,
}

/// Runs one closed-loop episode. Solver and integration errors end the
/// episode early; the partial trace and the failing step are returned.
pub fn run_episode(cfg: &SimConfig, controller: ControllerKind, task: &TaskSpec) -> Result<SimTrace> {
    cfg.validate()?;
    task.validate()?;
    let steps = (task.duration / cfg.delta).round() as usize;
    let ep = Episode {
        cfg,
        task,
        steps,
        horizon: cfg.horizon_steps(),
        lip: lipschitz_constants(&cfg.params),
    };
    let mut trace = SimTrace::new(cfg.delta, task.duration);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut z = StateVector::from_angles(cfg.initial_theta, &cfg.params);
    let mut ctrl = Controller::new(controller);

    for j in 0..=steps {
        let z_ref = ep.reference(j)?;
        let applied = if j < steps {
            let started = Instant::now();
            let res = ctrl.step(&ep, j, &z, &mut trace);
            trace.solver_time.0 += started.elapsed();
            match res {
                Ok(a) => Some(a),
                Err(err) => {
                    trace.failure = Some((j, err.to_string()));
                    None
                }
            }
        } else {
            None
        };
        let Some(a) = applied.or_else(|| {
            (j == steps).then(|| Applied {
                u: ControlVector::zeros(),
                v: ControlVector::zeros(),
                z_star: ctrl.nominal_at(j).unwrap_or(z),
                latency: 0,
                source: None,
                gamma: ctrl.gamma(),
            })
        }) else {
            push_sample(&ep, &mut trace, j, &z, &z, ControlVector::zeros(), ControlVector::zeros(), DisturbanceVector::zeros(), 0, None, None, &z_ref);
            break;
        };
        let e = if j < steps {
            sample_disturbance(&mut rng, cfg.params.eta1)
        } else {
            DisturbanceVector::zeros()
        };
        push_sample(&ep, &mut trace, j, &z, &a.z_star, a.u, a.v, e, a.latency, a.source, a.gamma, &z_ref);
        if j < steps {
            match integrate_step(&z, &a.u, cfg.delta, Some(&e), &cfg.params) {
                Ok(next) => z = next,
                Err(err) => {
                    trace.failure = Some((j, err.to_string()));
                    break;
                }
            }
        }
    }
    Ok(trace)
}

#[allow(clippy::too_many_arguments)]
fn push_sample(
    ep: &Episode<'_>,
    trace: &mut SimTrace,
    j: usize,
    z: &StateVector,
    z_star: &StateVector,
    u: ControlVector,
    v: ControlVector,
    e: DisturbanceVector,
    latency: usize,
    source: Option<usize>,
    gamma: Option<f64>,
    z_ref: &Vector5<f64>,
) {
    let margins = check_constraints(z, &u, &ep.cfg.params);
    trace.samples.push(Sample {
        step: j,
        t: j as f64 * ep.cfg.delta,
        z: *z,
        z_star: *z_star,
        u,
        v,
        e,
        e_norm: e.norm(),
        stage_cost: ep.stage_cost(z, &u, z_ref),
        pos_err: (z.position() - z_ref.fixed_rows::<2>(0)).norm(),
        viol: margins.violation_count(),
        margins,
        solve_latency_steps: latency,
        source_step: source,
        gamma,
    });
}

enum Controller {
    Optimal {
        warm: Option<Vec<ControlVector>>,
        last: Option<(usize, Vec<StateVector>)>,
    },
    Delayed {
        warm: Option<Vec<ControlVector>>,
        /// Result waiting to become applicable: (solve step, solution).
        pending: Option<(usize, OcpSolution)>,
        active: Option<(usize, OcpSolution)>,
    },
    Smooth {
        current: Option<Plan>,
        next: Option<Plan>,
    },
}

fn shifted(v: &[ControlVector], by: usize) -> Vec<ControlVector> {
    let last = *v.last().expect("non-empty plan");
    (0..v.len()).map(|i| v.get(i + by).copied().unwrap_or(last)).collect()
}

impl Controller {
    fn new(kind: ControllerKind) -> Self {
        match kind {
            ControllerKind::OptimalMpc => Controller::Optimal { warm: None, last: None },
            ControllerKind::TimeTriggeredDelayedMpc => Controller::Delayed {
                warm: None,
                pending: None,
                active: None,
            },
            ControllerKind::SmoothTubeMpc => Controller::Smooth { current: None, next: None },
        }
    }

    fn nominal_at(&self, j: usize) -> Option<StateVector> {
        match self {
            Controller::Optimal { last, .. } => last.as_ref().map(|(s, z)| z[(j - s).min(z.len() - 1)]),
            Controller::Delayed { active, .. } => active
                .as_ref()
                .map(|(s, sol)| sol.z_bar_star[(j - s).min(sol.z_bar_star.len() - 1)]),
            Controller::Smooth { current, .. } => current
                .as_ref()
                .map(|p| p.z_star[(j - p.start).min(p.z_star.len() - 1)]),
        }
    }

    fn gamma(&self) -> Option<f64> {
        match self {
            Controller::Smooth { current, .. } => current.as_ref().map(|p| p.gamma),
            _ => None,
        }
    }

    fn step(&mut self, ep: &Episode<'_>, j: usize, z: &StateVector, trace: &mut SimTrace) -> Result<Applied> {
        let cfg = ep.cfg;
        let m = cfg.m;
        match self {
            Controller::Optimal { warm, last } => {
                let sol = solve_baseline(ep, j, z, warm.as_deref(), trace)?;
                let u = sol.v_star[0];
                *warm = Some(shifted(&sol.v_star, 1));
                *last = Some((j, sol.z_bar_star.clone()));
                Ok(Applied {
                    u,
                    v: u,
                    z_star: sol.z_bar_star[0],
                    latency: 0,
                    source: Some(j),
                    gamma: None,
                })
            }
            Controller::Delayed { warm, pending, active } => {
                if j.is_multiple_of(m) {
                    if let Some(p) = pending.take() {
                        *active = Some(p);
                    }
                    if j + m < ep.steps {
                        let sol = solve_baseline(ep, j, z, warm.as_deref(), trace)?;
                        *warm = Some(shifted(&sol.v_star, m));
                        *pending = Some((j, sol));
                    }
                }
                Ok(match active {
                    Some((src, sol)) => Applied {
                        u: sol.v_star[0],
                        v: sol.v_star[0],
                        z_star: sol.z_bar_star[(j - *src).min(sol.z_bar_star.len() - 1)],
                        latency: m,
                        source: Some(*src),
                        gamma: None,
                    },
                    None => Applied {
                        u: ControlVector::zeros(),
                        v: ControlVector::zeros(),
                        z_star: *z,
                        latency: m,
                        source: None,
                        gamma: None,
                    },
                })
            }
            Controller::Smooth { current, next } => {
                if j == 0 {
                    *current = Some(bootstrap_plan(ep, z, trace)?);
                } else if j.is_multiple_of(m) {
                    *current = Some(next.take().ok_or_else(|| {
                        Error::InvalidParameter("no plan prepared for this period".into())
                    })?);
                }
                let plan = current.as_ref().expect("plan is active");
                if j.is_multiple_of(m) && j + m < ep.steps {
                    *next = Some(prepare_next_plan(ep, j, z, plan, trace)?);
                }
                let (u, v, zs) = plan.control(j, z);
                Ok(Applied {
                    u,
                    v,
                    z_star: zs,
                    latency: plan.latency,
                    source: Some(plan.source_step),
                    gamma: Some(plan.gamma),
                })
            }
        }
    }
}

fn solve_baseline(
    ep: &Episode<'_>,
    j: usize,
    z: &StateVector,
    warm: Option<&[ControlVector]>,
    trace: &mut SimTrace,
) -> Result<OcpSolution> {
    let u0 = warm.map(|w| w[0]).unwrap_or_else(ControlVector::zeros);
    let design = ep.design(&linearize(z, &u0, &ep.cfg.params), false)?;
    let spec = ep.spec(&design, InitialCondition::Point(*z), ep.references_from(j)?);
    let sol = solve_ocp1_baseline(z, &ep.cfg.params, &spec, warm)?;
    if !sol.terminal_in_set {
        trace.terminal_misses += 1;
    }
    Ok(sol)
}

/// Solves the tube OCP from `center` with the model linearized at
/// `(center, u_lin)`; the plan starts at step `start`.
#[allow(clippy::too_many_arguments)]
fn plan_from(
    ep: &Episode<'_>,
    start: usize,
    source_step: usize,
    latency: usize,
    center: &StateVector,
    u_lin: &ControlVector,
    trace: &mut SimTrace,
) -> Result<Plan> {
    let cfg = ep.cfg;
    let model = discretize_zoh(&linearize(center, u_lin, &cfg.params), cfg.delta)?;
    let design = ep.design(&model, true)?;
    let ok = design.report.condition_i && design.report.condition_ii;
    trace.theorem2.push((source_step, design.report.clone()));
    if !ok && cfg.theorem2_policy == Theorem2Policy::Abort {
        return Err(Error::Certificate(format!(
            "tube condition fails: lhs {:e} > rhs {:e}",
            design.report.lhs, design.report.rhs
        )));
    }
    let initial = InitialCondition::Set(DisturbedStateSet {
        center: *center,
        radius: deviation_bound(cfg.m, design.eta_step, ep.lip.l),
        steps_ahead: cfg.m,
    });
    let mut spec = ep.spec(&design, initial, ep.references_from(start)?);
    spec.models = vec![model.discrete.clone().expect("discretized")];
    let sol = solve_ocp(&spec)?;
    if !sol.terminal_in_set {
        trace.terminal_misses += 1;
    }
    let z_star = rollout(center, &sol.v_star, cfg.delta, &cfg.params)?;
    Ok(Plan {
        start,
        v: sol.v_star,
        z_star,
        k_z: design.k_z,
        gamma: design.gamma,
        source_step,
        latency,
    })
}

fn bootstrap_plan(ep: &Episode<'_>, z0: &StateVector, trace: &mut SimTrace) -> Result<Plan> {
    plan_from(ep, 0, 0, 0, z0, &ControlVector::zeros(), trace)
}

/// Predicts the state at the start of the next period by running the active
/// plan's ancillary law on the nominal model, then plans from there.
fn prepare_next_plan(
    ep: &Episode<'_>,
    j: usize,
    z: &StateVector,
    plan: &Plan,
    trace: &mut SimTrace,
) -> Result<Plan> {
    let cfg = ep.cfg;
    let m = cfg.m;
    let mut center = *z;
    for i in 0..m {
        let (u, _, _) = plan.control(j + i, &center);
        center = integrate_step(&center, &u, cfg.delta, None, &cfg.params)?;
    }
    let idx = j + m - plan.start;
    let u_lin = plan.v.get(idx).copied().unwrap_or_else(ControlVector::zeros);
    plan_from(ep, j + m, j, m, &center, &u_lin, trace)
}
