//! Problem data of the receding-horizon OCP and its condensed QP.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix5, Vector5};

use crate::deviation::DisturbedStateSet;
use crate::error::{Error, Result};
use crate::gains::TightenedSets;
use crate::linearization::DiscreteModel;
use crate::model::StateVector;
use crate::ocp::qp::QuadraticProgram;

/// Weights of `J = δ Σ (‖M(z_i − r_i)‖²_Q + ‖v_i‖²_R) + ‖M(z_N − r_N)‖²_P`.
/// `mask` is the diagonal of `M`; a zero removes that state component from
/// the tracking error.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub delta: f64,
    pub q: Matrix5<f64>,
    pub r: Matrix3<f64>,
    pub p: Matrix5<f64>,
    pub mask: Vector5<f64>,
}

impl CostWeights {
    fn masked(&self, w: &Matrix5<f64>) -> Matrix5<f64> {
        let m = Matrix5::from_diagonal(&self.mask);
        m * w * m
    }

    pub fn masked_q(&self) -> Matrix5<f64> {
        self.masked(&self.q)
    }

    pub fn masked_p(&self) -> Matrix5<f64> {
        self.masked(&self.p)
    }

    /// `‖M e‖_P`.
    pub fn terminal_norm(&self, err: &Vector5<f64>) -> f64 {
        let e = err.component_mul(&self.mask);
        e.dot(&(self.p * e)).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Point(StateVector),
    /// Solved from the set's center; the tube feedback covers the rest.
    Set(DisturbedStateSet),
}

impl InitialCondition {
    pub fn state(&self) -> StateVector {
        match self {
            InitialCondition::Point(z) => *z,
            InitialCondition::Set(s) => s.center,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSpec {
    pub horizon: usize,
    /// One model (time invariant) or one per horizon step.
    pub models: Vec<DiscreteModel>,
    pub weights: CostWeights,
    /// Multiplier on the terminal weight for the first solve.
    pub terminal_scale: f64,
    pub tightened: TightenedSets,
    pub initial: InitialCondition,
    /// `N + 1` reference states.
    pub z_ref: Vec<Vector5<f64>>,
    /// Radius of the terminal set `{‖M(z_N − r_N)‖_P ≤ ε}`.
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl OcpSpec {
    pub fn model(&self, i: usize) -> &DiscreteModel {
        if self.models.len() == 1 {
            &self.models[0]
        } else {
            &self.models[i]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.horizon;
        if n == 0 {
            return Err(Error::InvalidParameter("horizon must be at least one step".into()));
        }
        if self.models.len() != 1 && self.models.len() != n {
            return Err(Error::Dimension(format!(
                "expected 1 or {n} models, got {}",
                self.models.len()
            )));
        }
        if self.z_ref.len() != n + 1 {
            return Err(Error::Dimension(format!(
                "expected {} reference states, got {}",
                n + 1,
                self.z_ref.len()
            )));
        }
        if self.tightened.horizon() != n {
            return Err(Error::Dimension(format!(
                "tightened sets cover {} steps, horizon is {n}",
                self.tightened.horizon()
            )));
        }
        if !(self.weights.delta > 0.0) {
            return Err(Error::InvalidParameter("sampling step must be positive".into()));
        }
        if self.weights.r.cholesky().is_none() {
            return Err(Error::InvalidParameter("R must be positive definite".into()));
        }
        if !self.tightened.input_feasible {
            return Err(Error::InfeasibleTightening { step: 0 });
        }
        if let Some(step) = self.tightened.first_infeasible_step() {
            return Err(Error::InfeasibleTightening { step });
        }
        Ok(())
    }
}

/// Condensed QP split into stage and terminal parts so the terminal weight
/// can be rescaled without re-condensing.
#[derive(Debug, Clone)]
pub struct CondensedOcp {
    /// QP with the terminal weight at `spec.terminal_scale`.
    pub qp: QuadraticProgram,
    h_stage: DMatrix<f64>,
    g_stage: DVector<f64>,
    h_term: DMatrix<f64>,
    g_term: DVector<f64>,
    /// Free response `f_i` for `i = 0..=N`.
    pub free: Vec<Vector5<f64>>,
    /// Input-to-state map, `5(N+1) × 3N`.
    pub gamma: DMatrix<f64>,
}

impl CondensedOcp {
    pub fn with_terminal_scale(&self, scale: f64) -> QuadraticProgram {
        let mut qp = self.qp.clone();
        qp.h = &self.h_stage + &self.h_term * scale;
        qp.g = &self.g_stage + &self.g_term * scale;
        qp
    }
}

pub fn build_condensed_qp(spec: &OcpSpec) -> Result<CondensedOcp> {
    spec.validate()?;
    let n = spec.horizon;
    let nv = 3 * n;
    let z0 = spec.initial.state().0;

    let mut free = Vec::with_capacity(n + 1);
    free.push(z0);
    let mut gamma = DMatrix::<f64>::zeros(5 * (n + 1), nv);
    for i in 0..n {
        let m = spec.model(i);
        free.push(m.ad * free[i] + m.omegad);
        // Γ_{i+1} = Ad_i Γ_i with Bd_i in the newest block.
        let prev = gamma.rows(5 * i, 5).columns(0, 3 * i).into_owned();
        let next = m.ad * prev;
        gamma.view_mut((5 * (i + 1), 0), (5, 3 * i)).copy_from(&next);
        gamma.view_mut((5 * (i + 1), 3 * i), (5, 3)).copy_from(&m.bd);
    }

    let w = &spec.weights;
    let wq = w.masked_q() * w.delta;
    let wp = w.masked_p();

    let mut h_stage = DMatrix::<f64>::zeros(nv, nv);
    let mut g_stage = DVector::<f64>::zeros(nv);
    // Step 0 does not depend on the decisions.
    for i in 1..n {
        let gi = gamma.view((5 * i, 0), (5, 3 * i));
        let wg = wq * gi;
        let mut block = h_stage.view_mut((0, 0), (3 * i, 3 * i));
        block.gemm_tr(2.0, &gi, &wg, 1.0);
        let e = free[i] - spec.z_ref[i];
        let mut gb = g_stage.rows_mut(0, 3 * i);
        gb.gemv_tr(2.0, &gi, &(wq * e), 1.0);
    }
    for i in 0..n {
        let rb = w.r * (2.0 * w.delta);
        let mut block = h_stage.view_mut((3 * i, 3 * i), (3, 3));
        block += rb;
    }
    let gn = gamma.rows(5 * n, 5);
    let h_term = gn.transpose() * wp * gn * 2.0;
    let g_term = gn.transpose() * (wp * (free[n] - spec.z_ref[n])) * 2.0;

    let t = &spec.tightened;
    let mut lb = DVector::zeros(nv);
    let mut ub = DVector::zeros(nv);
    for i in 0..n {
        for j in 0..3 {
            lb[3 * i + j] = t.omega_lo[j];
            ub[3 * i + j] = t.omega_hi[j];
        }
    }
    let rows = 3 * n;
    let mut a = DMatrix::zeros(rows, nv);
    let mut row_lo = DVector::zeros(rows);
    let mut row_hi = DVector::zeros(rows);
    for i in 1..=n {
        for j in 0..3 {
            let r = 3 * (i - 1) + j;
            let src = 5 * i + 2 + j;
            a.row_mut(r).copy_from(&gamma.row(src));
            row_lo[r] = t.theta_lo[i][j] - free[i][2 + j];
            row_hi[r] = t.theta_hi[i][j] - free[i][2 + j];
        }
    }

    let mut h = &h_stage + &h_term * spec.terminal_scale;
    h = (&h + h.transpose()) * 0.5;
    let g = &g_stage + &g_term * spec.terminal_scale;
    Ok(CondensedOcp {
        qp: QuadraticProgram {
            h,
            g,
            lb,
            ub,
            a,
            row_lo,
            row_hi,
        },
        h_stage: (&h_stage + h_stage.transpose()) * 0.5,
        g_stage,
        h_term: (&h_term + h_term.transpose()) * 0.5,
        g_term,
        free,
        gamma,
    })
}
