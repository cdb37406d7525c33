//! Dense strictly convex QP solver.
//!
//! Solves `min ½ vᵀHv + gᵀv` subject to `lb ≤ v ≤ ub` and
//! `row_lo ≤ A v ≤ row_hi` with the Goldfarb–Idnani dual active-set method.
//! Infinite bounds are skipped. The method starts from the unconstrained
//! minimizer and adds violated constraints one at a time while keeping the
//! iterate dual feasible, so the first primal-feasible iterate is optimal.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    /// Inequality rows; may have zero rows.
    pub a: DMatrix<f64>,
    pub row_lo: DVector<f64>,
    pub row_hi: DVector<f64>,
}

impl QuadraticProgram {
    /// Unconstrained problem with `n` variables.
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
            a: DMatrix::zeros(0, n),
            row_lo: DVector::zeros(0),
            row_hi: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(Error::Dimension(format!(
                "H is {}x{}, expected {n}x{n}",
                self.h.nrows(),
                self.h.ncols()
            )));
        }
        if self.lb.len() != n || self.ub.len() != n {
            return Err(Error::Dimension("bound vectors must match the variable count".into()));
        }
        let m = self.a.nrows();
        if self.a.ncols() != n || self.row_lo.len() != m || self.row_hi.len() != m {
            return Err(Error::Dimension("inequality rows are inconsistent".into()));
        }
        if (0..n).any(|i| self.lb[i] > self.ub[i]) || (0..m).any(|i| self.row_lo[i] > self.row_hi[i]) {
            return Err(Error::QpInfeasible);
        }
        Ok(())
    }

    pub fn objective(&self, v: &DVector<f64>) -> f64 {
        0.5 * v.dot(&(&self.h * v)) + self.g.dot(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub v: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Multipliers of `v ≥ lb` and `v ≤ ub`.
    pub lambda_lb: DVector<f64>,
    pub lambda_ub: DVector<f64>,
    /// Multipliers of `A v ≥ row_lo` and `A v ≤ row_hi`.
    pub lambda_row_lo: DVector<f64>,
    pub lambda_row_hi: DVector<f64>,
}

/// One inequality `sign·(row)ᵀv ≥ b` where the row is a unit vector or a
/// row of `A`.
#[derive(Debug, Clone, Copy)]
enum Kind {
    Lower(usize),
    Upper(usize),
    RowLo(usize),
    RowHi(usize),
}

#[derive(Debug, Clone, Copy)]
struct Constraint {
    kind: Kind,
    b: f64,
}

struct Problem<'a> {
    qp: &'a QuadraticProgram,
    cons: Vec<Constraint>,
    row_norms: Vec<f64>,
}

impl Problem<'_> {
    fn new(qp: &QuadraticProgram) -> Problem<'_> {
        let mut cons = Vec::new();
        for i in 0..qp.dim() {
            if qp.lb[i].is_finite() {
                cons.push(Constraint { kind: Kind::Lower(i), b: qp.lb[i] });
            }
            if qp.ub[i].is_finite() {
                cons.push(Constraint { kind: Kind::Upper(i), b: -qp.ub[i] });
            }
        }
        for r in 0..qp.a.nrows() {
            if qp.row_lo[r].is_finite() {
                cons.push(Constraint { kind: Kind::RowLo(r), b: qp.row_lo[r] });
            }
            if qp.row_hi[r].is_finite() {
                cons.push(Constraint { kind: Kind::RowHi(r), b: -qp.row_hi[r] });
            }
        }
        let row_norms = (0..qp.a.nrows()).map(|r| qp.a.row(r).norm()).collect();
        Problem { qp, cons, row_norms }
    }

    fn dot(&self, c: &Constraint, x: &DVector<f64>) -> f64 {
        match c.kind {
            Kind::Lower(i) => x[i],
            Kind::Upper(i) => -x[i],
            Kind::RowLo(r) => self.qp.a.row(r).dot(&x.transpose()),
            Kind::RowHi(r) => -self.qp.a.row(r).dot(&x.transpose()),
        }
    }

    fn norm(&self, c: &Constraint) -> f64 {
        match c.kind {
            Kind::Lower(_) | Kind::Upper(_) => 1.0,
            Kind::RowLo(r) | Kind::RowHi(r) => self.row_norms[r],
        }
    }

    /// `Jᵀ n`.
    fn jt_n(&self, c: &Constraint, j: &DMatrix<f64>, out: &mut DVector<f64>) {
        let n = j.nrows();
        match c.kind {
            Kind::Lower(i) | Kind::Upper(i) => {
                let s = if matches!(c.kind, Kind::Lower(_)) { 1.0 } else { -1.0 };
                for col in 0..n {
                    out[col] = s * j[(i, col)];
                }
            }
            Kind::RowLo(r) | Kind::RowHi(r) => {
                let s = if matches!(c.kind, Kind::RowLo(_)) { 1.0 } else { -1.0 };
                let row = self.qp.a.row(r);
                for col in 0..n {
                    out[col] = s * row.dot(&j.column(col).transpose());
                }
            }
        }
    }

    /// Adds `scale·n` to `out`.
    fn axpy_n(&self, c: &Constraint, scale: f64, out: &mut DVector<f64>) {
        match c.kind {
            Kind::Lower(i) => out[i] += scale,
            Kind::Upper(i) => out[i] -= scale,
            Kind::RowLo(r) => {
                for (k, a) in self.qp.a.row(r).iter().enumerate() {
                    out[k] += scale * a;
                }
            }
            Kind::RowHi(r) => {
                for (k, a) in self.qp.a.row(r).iter().enumerate() {
                    out[k] -= scale * a;
                }
            }
        }
    }
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

fn rotate_columns(m: &mut DMatrix<f64>, i: usize, k: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let x = m[(r, i)];
        let y = m[(r, k)];
        m[(r, i)] = c * x + s * y;
        m[(r, k)] = -s * x + c * y;
    }
}

struct ActiveSet {
    /// Indices into `Problem::cons`.
    idx: Vec<usize>,
    /// Upper-triangular factor, first `q` columns in use.
    r: DMatrix<f64>,
    j: DMatrix<f64>,
}

impl ActiveSet {
    fn q(&self) -> usize {
        self.idx.len()
    }

    /// Append a constraint whose `d = Jᵀn` has already been computed.
    fn add(&mut self, cons: usize, d: &mut DVector<f64>) {
        let n = self.j.nrows();
        let q = self.q();
        for k in (q + 1..n).rev() {
            let (c, s, h) = givens(d[k - 1], d[k]);
            d[k - 1] = h;
            d[k] = 0.0;
            rotate_columns(&mut self.j, k - 1, k, c, s);
        }
        for row in 0..=q {
            self.r[(row, q)] = d[row];
        }
        self.idx.push(cons);
    }

    fn drop(&mut self, pos: usize) {
        let q = self.q();
        for col in pos + 1..q {
            for row in 0..=col {
                self.r[(row, col - 1)] = self.r[(row, col)];
            }
        }
        for row in 0..q {
            self.r[(row, q - 1)] = 0.0;
        }
        for col in pos..q - 1 {
            let (c, s, h) = givens(self.r[(col, col)], self.r[(col + 1, col)]);
            self.r[(col, col)] = h;
            self.r[(col + 1, col)] = 0.0;
            for k in col + 1..q - 1 {
                let x = self.r[(col, k)];
                let y = self.r[(col + 1, k)];
                self.r[(col, k)] = c * x + s * y;
                self.r[(col + 1, k)] = -s * x + c * y;
            }
            rotate_columns(&mut self.j, col, col + 1, c, s);
        }
        self.idx.remove(pos);
    }

    /// Solves `R r = d[..q]`.
    fn back_solve(&self, d: &DVector<f64>, out: &mut Vec<f64>) {
        let q = self.q();
        out.clear();
        out.resize(q, 0.0);
        for i in (0..q).rev() {
            let mut acc = d[i];
            for k in i + 1..q {
                acc -= self.r[(i, k)] * out[k];
            }
            out[i] = acc / self.r[(i, i)];
        }
    }
}

/// Solves the QP to a KKT residual of at most `tol`.
///
/// Returns [`Error::QpInfeasible`] when the constraints admit no point and
/// [`Error::QpMaxIter`] with the last iterate when the iteration budget runs
/// out.
pub fn solve_qp(qp: &QuadraticProgram, tol: f64, max_iter: usize) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.dim();
    let chol = qp
        .h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("Hessian is not positive definite".into()))?;
    let problem = Problem::new(qp);

    // J = L⁻ᵀ so that JᵀHJ = I.
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::InvalidParameter("singular Cholesky factor".into()))?;
    let mut active = ActiveSet {
        idx: Vec::new(),
        r: DMatrix::zeros(n, n),
        j: l_inv.transpose(),
    };
    let mut x = -chol.solve(&qp.g);
    let mut u: Vec<f64> = Vec::new();
    let mut d = DVector::zeros(n);
    let mut z = DVector::zeros(n);
    let mut r = Vec::new();
    let mut iterations = 0;
    let feas_tol = (tol * 1e-3).min(1e-9);

    loop {
        // Most violated constraint, normalized by its row norm.
        let mut choice: Option<(usize, f64)> = None;
        for (ci, c) in problem.cons.iter().enumerate() {
            let s = problem.dot(c, &x) - c.b;
            let scaled = s / problem.norm(c).max(f64::MIN_POSITIVE);
            if s < -feas_tol * (1.0 + c.b.abs()) && choice.is_none_or(|(_, best)| scaled < best) {
                choice = Some((ci, scaled));
            }
        }
        let Some((p, _)) = choice else {
            break;
        };
        let cp = problem.cons[p];
        let mut u_new = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                let residual = kkt_residual(&problem, &x, &active.idx, &u);
                return Err(Error::QpMaxIter {
                    iterations: max_iter,
                    residual,
                    best: x.iter().copied().collect(),
                });
            }
            let q = active.q();
            problem.jt_n(&cp, &active.j, &mut d);
            z.fill(0.0);
            let mut d2_sq = 0.0;
            for k in q..n {
                let dk = d[k];
                d2_sq += dk * dk;
                if dk != 0.0 {
                    z.axpy(dk, &active.j.column(k), 1.0);
                }
            }
            active.back_solve(&d, &mut r);

            let mut t1 = f64::INFINITY;
            let mut drop_pos = None;
            for k in 0..q {
                if r[k] > 0.0 {
                    let ratio = u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_pos = Some(k);
                    }
                }
            }
            let d_sq = d.norm_squared();
            let s_p = problem.dot(&cp, &x) - cp.b;
            let t2 = if d2_sq <= 1e-14 * d_sq {
                f64::INFINITY
            } else {
                // zᵀn = d₂ᵀd₂ since z = J₂d₂ and d₂ = J₂ᵀn.
                -s_p / d2_sq
            };

            if t1.is_infinite() && t2.is_infinite() {
                return Err(Error::QpInfeasible);
            }
            if t2.is_infinite() {
                // Dual step only: the new constraint is dependent on the
                // active ones, so one of them has to leave.
                for k in 0..q {
                    u[k] -= t1 * r[k];
                }
                u_new += t1;
                let pos = drop_pos.expect("finite t1 has a blocking constraint");
                active.drop(pos);
                u.remove(pos);
                continue;
            }
            let t = t1.min(t2);
            x.axpy(t, &z, 1.0);
            for k in 0..q {
                u[k] -= t * r[k];
            }
            u_new += t;
            if t2 <= t1 {
                active.add(p, &mut d);
                u.push(u_new);
                break;
            }
            let pos = drop_pos.expect("partial step has a blocking constraint");
            active.drop(pos);
            u.remove(pos);
        }
    }

    // Active bounds hold only up to round-off after the Givens updates; snap
    // so callers see the box respected exactly.
    for i in 0..n {
        x[i] = x[i].clamp(qp.lb[i], qp.ub[i]);
    }
    let kkt = kkt_residual(&problem, &x, &active.idx, &u);
    let mut sol = QpSolution {
        objective: qp.objective(&x),
        kkt_residual: kkt,
        iterations,
        lambda_lb: DVector::zeros(n),
        lambda_ub: DVector::zeros(n),
        lambda_row_lo: DVector::zeros(qp.a.nrows()),
        lambda_row_hi: DVector::zeros(qp.a.nrows()),
        v: x,
    };
    for (&ci, &ui) in active.idx.iter().zip(&u) {
        match problem.cons[ci].kind {
            Kind::Lower(i) => sol.lambda_lb[i] += ui,
            Kind::Upper(i) => sol.lambda_ub[i] += ui,
            Kind::RowLo(k) => sol.lambda_row_lo[k] += ui,
            Kind::RowHi(k) => sol.lambda_row_hi[k] += ui,
        }
    }
    if kkt > tol {
        return Err(Error::QpMaxIter {
            iterations,
            residual: kkt,
            best: sol.v.iter().copied().collect(),
        });
    }
    Ok(sol)
}

/// Max of stationarity, primal infeasibility, complementarity and dual
/// infeasibility, all in the infinity norm.
/// Stationarity is measured relative to `1 + max(‖Hx‖∞, ‖g‖∞)` so heavily
/// weighted problems are not held to a tolerance below their round-off;
/// feasibility, dual sign and complementarity are absolute.
fn kkt_residual(problem: &Problem<'_>, x: &DVector<f64>, active: &[usize], u: &[f64]) -> f64 {
    let qp = problem.qp;
    let hx = &qp.h * x;
    let scale = 1.0 + hx.amax().max(qp.g.amax());
    let mut grad = hx + &qp.g;
    let mut comp: f64 = 0.0;
    let mut dual: f64 = 0.0;
    for (&ci, &ui) in active.iter().zip(u) {
        let c = &problem.cons[ci];
        problem.axpy_n(c, -ui, &mut grad);
        comp = comp.max((ui * (problem.dot(c, x) - c.b)).abs());
        dual = dual.max(-ui);
    }
    let mut primal: f64 = 0.0;
    for c in &problem.cons {
        primal = primal.max(c.b - problem.dot(c, x));
    }
    (grad.amax() / scale).max(primal).max(comp).max(dual)
}
