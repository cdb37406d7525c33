//! Receding-horizon OCP solves: tube form with terminal-penalty escalation
//! and the successive-linearization baseline.

use nalgebra::{DVector, Vector5};

use crate::error::{Error, Result};
use crate::linearization::{discretize_zoh, linearize};
use crate::model::{integrate_step, ControlVector, ManipulatorParams, StateVector};
use crate::ocp::condense::{build_condensed_qp, CostWeights, InitialCondition, OcpSpec};
use crate::ocp::qp::solve_qp;

/// Terminal weight multiplier between escalation rounds.
pub const ESCALATION_FACTOR: f64 = 10.0;
/// QP solves allowed per OCP, the first included.
pub const ESCALATION_ROUNDS: usize = 8;
pub const SQP_MAX_ROUNDS: usize = 10;
pub const SQP_TOL: f64 = 1e-6;
/// Sufficient-decrease fraction of the line search.
const ARMIJO: f64 = 1e-4;
/// Smallest step the line search tries.
const LINE_SEARCH_MIN: f64 = 1.0 / 64.0;

/// `δ Σ_{i<N} (‖M(z_i − r_i)‖²_Q + ‖v_i‖²_R) + ‖M(z_N − r_N)‖²_P`.
pub fn total_cost(
    z_seq: &[StateVector],
    v_seq: &[ControlVector],
    z_ref: &[Vector5<f64>],
    weights: &CostWeights,
) -> Result<f64> {
    let n = v_seq.len();
    if z_seq.len() != n + 1 || z_ref.len() != n + 1 {
        return Err(Error::Dimension(format!(
            "cost needs N+1 states and references for N = {n} inputs"
        )));
    }
    let q = weights.masked_q();
    let p = weights.masked_p();
    let mut stage = 0.0;
    for i in 0..n {
        let e = z_seq[i].0 - z_ref[i];
        stage += e.dot(&(q * e)) + v_seq[i].0.dot(&(weights.r * v_seq[i].0));
    }
    let e = z_seq[n].0 - z_ref[n];
    Ok(weights.delta * stage + e.dot(&(p * e)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscalationRound {
    pub terminal_scale: f64,
    pub terminal_norm: f64,
    pub in_set: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub v_star: Vec<ControlVector>,
    /// Predicted states from the discrete models, `N + 1` entries.
    pub z_bar_star: Vec<StateVector>,
    /// Cost at the base terminal weight.
    pub cost: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub terminal_in_set: bool,
    pub penalty_weight_used: f64,
    pub escalation: Vec<EscalationRound>,
    /// Max-norm change of the control sequence per relinearization round.
    pub sqp_deltas: Vec<f64>,
}

fn to_controls(v: &DVector<f64>) -> Vec<ControlVector> {
    v.as_slice()
        .chunks_exact(3)
        .map(|c| ControlVector::new(c[0], c[1], c[2]))
        .collect()
}

/// Replays the discrete models under `v`.
pub fn predict_discrete(spec: &OcpSpec, v: &[ControlVector]) -> Vec<StateVector> {
    let mut z = Vec::with_capacity(spec.horizon + 1);
    z.push(spec.initial.state().0);
    for i in 0..spec.horizon {
        let next = spec.model(i).step(&z[i], &v[i].0);
        z.push(next);
    }
    z.into_iter().map(StateVector).collect()
}

/// Solves the OCP from the initial state (the set center for a set-valued
/// initial condition). The terminal set is handled by escalating the
/// terminal weight until the prediction lands inside it or the round budget
/// runs out; the best effort is returned with `terminal_in_set = false`.
pub fn solve_ocp(spec: &OcpSpec) -> Result<OcpSolution> {
    let condensed = build_condensed_qp(spec)?;
    let mut scale = spec.terminal_scale;
    let mut escalation = Vec::new();
    let mut iterations = 0;
    loop {
        let qp = condensed.with_terminal_scale(scale);
        let sol = solve_qp(&qp, spec.tol, spec.max_iter)?;
        iterations += sol.iterations;
        let v_star = to_controls(&sol.v);
        let z_bar_star = predict_discrete(spec, &v_star);
        let n = spec.horizon;
        let terminal_norm = spec
            .weights
            .terminal_norm(&(z_bar_star[n].0 - spec.z_ref[n]));
        let in_set = terminal_norm <= spec.epsilon;
        escalation.push(EscalationRound {
            terminal_scale: scale,
            terminal_norm,
            in_set,
        });
        if in_set || escalation.len() >= ESCALATION_ROUNDS {
            let cost = total_cost(&z_bar_star, &v_star, &spec.z_ref, &spec.weights)?;
            return Ok(OcpSolution {
                v_star,
                z_bar_star,
                cost,
                kkt_residual: sol.kkt_residual,
                iterations,
                terminal_in_set: in_set,
                penalty_weight_used: scale,
                escalation,
                sqp_deltas: Vec::new(),
            });
        }
        scale *= ESCALATION_FACTOR;
    }
}

/// Nonlinear nominal rollout of `controls` from `z0`.
pub fn rollout(
    z0: &StateVector,
    controls: &[ControlVector],
    delta: f64,
    params: &ManipulatorParams,
) -> Result<Vec<StateVector>> {
    let mut out = Vec::with_capacity(controls.len() + 1);
    out.push(*z0);
    for u in controls {
        let next = integrate_step(out.last().expect("non-empty"), u, delta, None, params)?;
        out.push(next);
    }
    Ok(out)
}

/// Cost of the nonlinear rollout of `v`, with the terminal weight scaled.
fn nonlinear_cost(
    z0: &StateVector,
    v: &[ControlVector],
    spec: &OcpSpec,
    scale: f64,
    params: &ManipulatorParams,
) -> Result<f64> {
    let traj = rollout(z0, v, spec.weights.delta, params)?;
    let mut w = spec.weights.clone();
    w.p *= scale;
    total_cost(&traj, v, &spec.z_ref, &w)
}

/// Step along `d` from `v`.
fn along(v: &[ControlVector], d: &[ControlVector], alpha: f64) -> Vec<ControlVector> {
    v.iter()
        .zip(d)
        .map(|(a, b)| ControlVector(a.0 + b.0 * alpha))
        .collect()
}

/// OCP with the nonlinear kinematics, solved by successive linearization
/// along the current control guess. `template` supplies everything except
/// the models and the initial condition.
///
/// Each round solves the QP of the model linearized along the rollout of the
/// guess and moves towards its solution with a backtracking line search on
/// the nonlinear cost. The angle rows are exact integrators, so the joint
/// constraints are linear in the controls and every step stays feasible.
pub fn solve_ocp1_baseline(
    z_meas: &StateVector,
    params: &ManipulatorParams,
    template: &OcpSpec,
    warm_start: Option<&[ControlVector]>,
) -> Result<OcpSolution> {
    let n = template.horizon;
    let delta = template.weights.delta;
    let mut guess: Vec<ControlVector> = match warm_start {
        Some(w) if w.len() == n => w.to_vec(),
        _ => vec![ControlVector::zeros(); n],
    };
    let mut spec = template.clone();
    spec.initial = InitialCondition::Point(*z_meas);
    let mut deltas = Vec::new();
    let mut iterations = 0;
    let mut last = None;
    for round in 0..SQP_MAX_ROUNDS {
        let traj = rollout(z_meas, &guess, delta, params)?;
        // Offsets are matched to the rollout so the guess is reproduced exactly.
        spec.models = traj
            .windows(2)
            .zip(&guess)
            .map(|(w, u)| {
                let mut d = discretize_zoh(&linearize(&w[0], u, params), delta)?
                    .discrete
                    .expect("discretized");
                d.omegad = w[1].0 - d.ad * w[0].0 - d.bd * u.0;
                Ok(d)
            })
            .collect::<Result<_>>()?;
        let sol = solve_ocp(&spec)?;
        iterations += sol.iterations;
        let scale = sol.penalty_weight_used;
        let step: Vec<ControlVector> = sol
            .v_star
            .iter()
            .zip(&guess)
            .map(|(a, b)| ControlVector(a.0 - b.0))
            .collect();

        // A cold first round has no meaningful point to compare against.
        let mut alpha = 1.0;
        if round > 0 || warm_start.is_some() {
            let mut w = spec.weights.clone();
            w.p *= scale;
            let lin = |v: &[ControlVector]| total_cost(&predict_discrete(&spec, v), v, &spec.z_ref, &w);
            let predicted = (lin(&guess)? - lin(&sol.v_star)?).max(0.0);
            let base = nonlinear_cost(z_meas, &guess, &spec, scale, params)?;
            loop {
                let trial = nonlinear_cost(z_meas, &along(&guess, &step, alpha), &spec, scale, params)?;
                if trial <= base - ARMIJO * alpha * predicted {
                    break;
                }
                alpha *= 0.5;
                if alpha < LINE_SEARCH_MIN {
                    break;
                }
            }
        }
        // No sufficient decrease left: the guess is as good as the
        // linearized models can tell, so stop without moving.
        if alpha < LINE_SEARCH_MIN {
            deltas.push(0.0);
            spec.terminal_scale = scale;
            last = Some((sol, 0.0));
            break;
        }
        let next = along(&guess, &step, alpha);
        let change = step.iter().map(|d| d.0.amax()).fold(0.0, f64::max) * alpha;
        deltas.push(change);
        spec.terminal_scale = scale;
        last = Some((sol, alpha));
        guess = next;
        if change < SQP_TOL {
            break;
        }
    }
    let (mut sol, alpha) = last.expect("at least one round");
    if alpha < 1.0 {
        sol.z_bar_star = predict_discrete(&spec, &guess);
        sol.cost = total_cost(&sol.z_bar_star, &guess, &spec.z_ref, &spec.weights)?;
        sol.v_star = guess;
    }
    sol.iterations = iterations;
    sol.sqp_deltas = deltas;
    Ok(sol)
}
