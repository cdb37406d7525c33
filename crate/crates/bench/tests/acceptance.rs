//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness so the lines always print.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tubempc::gains::synthesize_tube_gains;
use tubempc::linearization::linearize;
use tubempc::model::{
    dynamics_nominal, forward_kinematics, lipschitz_constants, paper_initial_theta, ControlVector,
    ManipulatorParams, StateVector,
};
use tubempc::ocp::qp::{solve_qp, QpSolution, QuadraticProgram};
use tubempc::sim::{metrics_summary, run_episode, ControllerKind, TaskSpec};
use tubempc_bench::check::{check_linearization_bound, check_state_sets, LITERAL_ETA};
use tubempc_bench::compare::{run_compare, CompareReport};
use tubempc_bench::config::ResolvedConfig;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_forward_kinematics() -> Outcome {
    let p = ManipulatorParams::paper();
    let theta = paper_initial_theta();
    let started = Instant::now();
    let (x, y) = forward_kinematics(theta, &p);
    let took = started.elapsed();
    let err = x.abs().max((y - 4.0).abs());
    ensure(
        err <= 1e-12 && took < Duration::from_millis(1),
        format!("p = ({x:?}, {y:?}), error {err:e}, {took:?}"),
    )
}

fn c2_lipschitz() -> Outcome {
    let lip = lipschitz_constants(&ManipulatorParams::paper());
    let s10 = 10f64.sqrt();
    ensure(
        lip.l1 == s10 && lip.l == 1.0 + s10,
        format!("l1 = {:?}, l = {:?}", lip.l1, lip.l),
    )
}

fn random_point(rng: &mut ChaCha8Rng, p: &ManipulatorParams) -> (StateVector, ControlVector) {
    let theta = std::array::from_fn(|i| rng.random_range(p.theta_lo[i]..=p.theta_hi[i]));
    let u = ControlVector(Vector3::from_fn(|i, _| rng.random_range(-p.omega_max[i]..=p.omega_max[i])));
    (StateVector::from_angles(theta, p), u)
}

fn c3_jacobian() -> Outcome {
    let p = ManipulatorParams::paper();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (z, u) = random_point(&mut rng, &p);
        let m = linearize(&z, &u, &p);
        let mut fd = SMatrix::<f64, 5, 8>::zeros();
        for k in 0..8 {
            let (mut zp, mut up, mut zm, mut um) = (z, u, z, u);
            if k < 5 {
                zp.0[k] += h;
                zm.0[k] -= h;
            } else {
                up.0[k - 5] += h;
                um.0[k - 5] -= h;
            }
            fd.set_column(k, &((dynamics_nominal(&zp, &up, &p) - dynamics_nominal(&zm, &um, &p)) / (2.0 * h)));
        }
        let a_fd = fd.fixed_view::<5, 5>(0, 0).into_owned();
        let b_fd = fd.fixed_view::<5, 3>(0, 5).into_owned();
        worst = worst
            .max((m.a - a_fd).norm() / a_fd.norm().max(1e-3))
            .max((m.b - b_fd).norm() / b_fd.norm());
    }
    ensure(worst <= 1e-5, format!("100 points, worst relative error {worst:e}"))
}

fn c4_linearization_bound() -> Outcome {
    let r = check_linearization_bound(&ManipulatorParams::paper(), 0.1, 10_000, 4);
    ensure(
        r.violations == 0,
        format!("{} samples, {} violations, worst ratio {:.4}", r.samples, r.violations, r.worst_ratio),
    )
}

fn c5_state_sets() -> Outcome {
    let started = Instant::now();
    let sets = check_state_sets(
        &ManipulatorParams::paper(),
        0.1,
        LITERAL_ETA,
        &(1..=8).collect::<Vec<_>>(),
        1000,
        5,
    )
    .map_err(|e| e.to_string())?;
    let took = started.elapsed();
    let failures: usize = sets.iter().map(|s| s.failures).sum();
    let rollouts: usize = sets.iter().map(|s| s.rollouts).sum();
    ensure(
        failures == 0 && rollouts == 8000 && took < Duration::from_secs(30),
        format!("m = 1..8, {rollouts} rollouts, {failures} failures, {took:.2?}"),
    )
}

/// Exact minimizer by enumerating every active set.
fn enumerate(qp: &QuadraticProgram) -> Option<DVector<f64>> {
    let (n, m) = (qp.dim(), qp.a.nrows());
    let mut best: Option<(f64, DVector<f64>)> = None;
    'codes: for code in 0..3usize.pow((n + m) as u32) {
        let mut c = code;
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        for k in 0..n + m {
            let s = c % 3;
            c /= 3;
            if s == 0 {
                continue;
            }
            let (row, b) = if k < n {
                (DVector::from_fn(n, |i, _| if i == k { 1.0 } else { 0.0 }), if s == 1 { qp.lb[k] } else { qp.ub[k] })
            } else {
                let j = k - n;
                (qp.a.row(j).transpose(), if s == 1 { qp.row_lo[j] } else { qp.row_hi[j] })
            };
            if !b.is_finite() {
                continue 'codes;
            }
            rows.push((row, b));
        }
        let p = rows.len();
        let mut kkt = DMatrix::zeros(n + p, n + p);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
        let mut rhs = DVector::zeros(n + p);
        rhs.rows_mut(0, n).copy_from(&(-&qp.g));
        for (i, (row, b)) in rows.iter().enumerate() {
            kkt.view_mut((0, n + i), (n, 1)).copy_from(row);
            kkt.view_mut((n + i, 0), (1, n)).copy_from(&row.transpose());
            rhs[n + i] = *b;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let v = sol.rows(0, n).into_owned();
        let av = &qp.a * &v;
        let tol = 1e-9;
        let feasible = (0..n).all(|i| v[i] >= qp.lb[i] - tol && v[i] <= qp.ub[i] + tol)
            && (0..m).all(|j| av[j] >= qp.row_lo[j] - tol && av[j] <= qp.row_hi[j] + tol);
        if feasible {
            let f = qp.objective(&v);
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, v));
            }
        }
    }
    best.map(|(_, v)| v)
}

fn kkt_residual(qp: &QuadraticProgram, s: &QpSolution) -> f64 {
    let stat = &qp.h * &s.v + &qp.g - &s.lambda_lb + &s.lambda_ub - qp.a.transpose() * &s.lambda_row_lo
        + qp.a.transpose() * &s.lambda_row_hi;
    let mut worst = stat.amax();
    let mut slack = |lambda: f64, gap: f64| {
        worst = worst.max((-gap).max(0.0)).max((-lambda).max(0.0));
        worst = worst.max(if gap.is_finite() { (lambda * gap).abs() } else { lambda.abs() });
    };
    for i in 0..qp.dim() {
        slack(s.lambda_lb[i], s.v[i] - qp.lb[i]);
        slack(s.lambda_ub[i], qp.ub[i] - s.v[i]);
    }
    let av = &qp.a * &s.v;
    for j in 0..qp.a.nrows() {
        slack(s.lambda_row_lo[j], av[j] - qp.row_lo[j]);
        slack(s.lambda_row_hi[j], qp.row_hi[j] - av[j]);
    }
    worst
}

fn c6_qp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut dv, mut dk): (f64, f64) = (0.0, 0.0);
    for case in 0..50 {
        let n = 1 + case % 6;
        let rows = case % 3;
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = &m * m.transpose() + DMatrix::identity(n, n) * 0.1;
        let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let mut qp = QuadraticProgram::unconstrained(h, g);
        for i in 0..n {
            if rng.random_bool(0.8) {
                qp.lb[i] = rng.random_range(-1.0..0.0);
            }
            if rng.random_bool(0.8) {
                qp.ub[i] = rng.random_range(0.0..1.0);
            }
        }
        qp.a = DMatrix::from_fn(rows, n, |_, _| rng.random_range(-1.0..1.0));
        qp.row_lo = DVector::from_fn(rows, |_, _| rng.random_range(-1.0..-0.05));
        qp.row_hi = DVector::from_fn(rows, |_, _| rng.random_range(0.05..1.0));
        let s = solve_qp(&qp, 1e-9, 500).map_err(|e| format!("case {case}: {e}"))?;
        let oracle = enumerate(&qp).ok_or_else(|| format!("case {case}: oracle found no point"))?;
        dv = dv.max((&s.v - &oracle).amax());
        dk = dk.max(kkt_residual(&qp, &s));
    }
    ensure(
        dv <= 1e-4 && dk <= 1e-6,
        format!("50 instances, max |v - oracle| {dv:e}, max KKT residual {dk:e}"),
    )
}

fn c7_scalar_dare() -> Outcome {
    let one = DMatrix::from_element(1, 1, 1.0);
    let g = synthesize_tube_gains(&one, &one, &one, &one).map_err(|e| e.to_string())?;
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    let (ep, ek) = ((g.p[(0, 0)] - p).abs(), (g.k[(0, 0)] + p / (1.0 + p)).abs());
    ensure(
        ep <= 1e-9 && ek <= 1e-9,
        format!("p = {:?}, k = {:?}, errors {ep:e} / {ek:e}", g.p[(0, 0)], g.k[(0, 0)]),
    )
}

struct FullCompare {
    report: CompareReport,
    took: Duration,
}

fn full_compare() -> &'static Result<FullCompare, String> {
    static CELL: OnceLock<Result<FullCompare, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = ResolvedConfig::paper();
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let started = Instant::now();
        let report = run_compare(
            &cfg,
            &cfg.controller_kinds().map_err(|e| e.to_string())?,
            &cfg.task_specs().map_err(|e| e.to_string())?,
            &cfg.seed_list(),
            dir.path(),
        )
        .map_err(|e| e.to_string())?;
        Ok(FullCompare {
            report,
            took: started.elapsed(),
        })
    })
}

fn c8_tube_containment() -> Outcome {
    let full = full_compare().as_ref().map_err(Clone::clone)?;
    let smooth: Vec<_> = full
        .report
        .runs
        .iter()
        .filter(|r| r.controller == ControllerKind::SmoothTubeMpc)
        .collect();
    let seeds = smooth.iter().map(|r| r.seed).collect::<std::collections::BTreeSet<_>>().len();
    let worst = smooth
        .iter()
        .map(|r| r.tube_excess.unwrap_or(f64::INFINITY))
        .fold(f64::NEG_INFINITY, f64::max);
    let failed = smooth.iter().filter(|r| r.failure.is_some()).count();
    ensure(
        seeds == 10 && failed == 0 && worst <= 0.0,
        format!(
            "{} smooth runs over {seeds} seeds, {failed} failed, max (|z - z*| - gamma) = {worst:e}",
            smooth.len()
        ),
    )
}

fn c9_constraints() -> Outcome {
    let mut cfg = ResolvedConfig::paper().sim_config(0);
    cfg.params.eta1 = 0.0;
    let mut parts = Vec::new();
    let mut ok = true;
    for task in [TaskSpec::paper_position(), TaskSpec::paper_trajectory()] {
        let trace = run_episode(&cfg, ControllerKind::SmoothTubeMpc, &task).map_err(|e| e.to_string())?;
        let viol = metrics_summary(&trace).violation_count;
        ok &= trace.completed() && trace.samples.len() == 301 && viol == 0;
        parts.push(format!("{}: {} steps, {viol} violations", task.name(), trace.samples.len() - 1));
    }
    ensure(ok, parts.join("; "))
}

fn c10_ordering() -> Outcome {
    let full = full_compare().as_ref().map_err(Clone::clone)?;
    let r = &full.report;
    let worst_final = r
        .runs
        .iter()
        .filter(|x| x.task == "position" && x.controller == ControllerKind::SmoothTubeMpc)
        .map(|x| x.metrics.final_error)
        .fold(0.0, f64::max);
    let mut parts: Vec<String> = r
        .verdicts
        .iter()
        .map(|v| {
            format!(
                "{}: {:.6} <= {:.6} <= {:.6} {}",
                v.task,
                v.optimal,
                v.smooth,
                v.delayed,
                if v.holds { "holds" } else { "violated" }
            )
        })
        .collect();
    parts.push(format!("smooth position final error <= {worst_final:.6}"));
    parts.push(format!("{:.1?}", full.took));
    ensure(
        r.all_completed()
            && r.verdicts.len() == 2
            && r.ordering_holds()
            && worst_final < 0.1
            && full.took < Duration::from_secs(120),
        parts.join("; "),
    )
}

fn run_binary(args: &[&str], dir: &Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tubempc"))
        .args(args)
        .current_dir(dir)
        .env_remove("TUBEMPC_CONFIG")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?} exited with {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn csv_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("runs")] {
        for e in std::fs::read_dir(&sub).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.extension().is_some_and(|x| x == "csv") {
                let bytes = std::fs::read(&p).map_err(|e| e.to_string())?;
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), bytes));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn c11_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let args = ["--preset", "paper", "--seeds", "1", "--out"];
    let mut a = args.to_vec();
    a.extend(["a", "compare"]);
    let mut b = args.to_vec();
    b.extend(["b", "compare"]);
    run_binary(&a, dir.path())?;
    run_binary(&b, dir.path())?;
    let (fa, fb) = (csv_files(&dir.path().join("a"))?, csv_files(&dir.path().join("b"))?);
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    ensure(
        fa.len() == fb.len() && fa.len() == 11 && differing.is_empty(),
        format!("{} CSV files compared, {} differ {differing:?}", fa.len(), differing.len()),
    )
}

fn c12_stability_report() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let text = run_binary(&["--preset", "paper", "check"], dir.path())?;
    let expected = 0.08 * (2.0 + 10f64.sqrt()).powi(4);
    let mut lines = text.lines().skip_while(|l| !l.starts_with("stability report (literal bound)"));
    lines.next().ok_or("no literal-bound stability report")?;
    let cond = lines.next().ok_or("missing condition (ii) line")?;
    let lhs: f64 = cond
        .split("lhs = m*eta*(1+l)^m = ")
        .nth(1)
        .and_then(|s| s.split(',').next())
        .ok_or_else(|| format!("cannot read lhs from `{cond}`"))?
        .parse()
        .map_err(|e| format!("{e}"))?;
    let has_rhs = cond.contains("rhs = gamma = ");
    let eig = lines.clone().take(2).any(|l| l.trim_start().starts_with("eigenvalues:"));
    let cond_i = lines.take(2).any(|l| l.trim_start().starts_with("condition (i):"));
    let rel = (lhs - expected).abs() / expected;
    ensure(
        rel <= 1e-12 && has_rhs && eig && cond_i,
        format!("lhs {lhs:?} vs 0.08*(2+sqrt10)^4 = {expected:?} (relative {rel:e}); {}", cond.trim()),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("forward kinematics pin", c1_forward_kinematics),
        ("Lipschitz pin", c2_lipschitz),
        ("Jacobian oracle", c3_jacobian),
        ("linearization-bound soundness", c4_linearization_bound),
        ("disturbed state set Monte Carlo", c5_state_sets),
        ("QP oracle equivalence", c6_qp_oracle),
        ("scalar DARE pin", c7_scalar_dare),
        ("tube containment", c8_tube_containment),
        ("constraint satisfaction", c9_constraints),
        ("ordering property", c10_ordering),
        ("determinism", c11_determinism),
        ("stability report", c12_stability_report),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
