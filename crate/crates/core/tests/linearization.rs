use nalgebra::{DMatrix, Matrix5, Vector5};
use tubempc::linearization::*;
use tubempc::model::{dynamics_nominal, velocity_map, ControlVector, ManipulatorParams, StateVector};
use tubempc::model::paper_initial_state;
use approx::assert_abs_diff_eq;

#[test]
fn zero_input_has_no_drift_terms() {
    let p = ManipulatorParams::paper();
    let z = paper_initial_state();
    let m = linearize(&z, &ControlVector::zeros(), &p);
    assert_eq!(m.a, Matrix5::zeros());
    assert_eq!(m.omega, Vector5::zeros());
    assert_eq!(m.b, velocity_map(z.theta(), &p));
}

#[test]
fn structure_of_a_and_b() {
    let p = ManipulatorParams::paper();
    let z = StateVector::from_angles([2.0, 1.0, 0.4], &p);
    let m = linearize(&z, &ControlVector::new(0.1, -0.2, 0.15), &p);
    for r in 2..5 {
        for c in 0..5 {
            assert_eq!(m.a[(r, c)], 0.0);
        }
        for c in 0..3 {
            assert_eq!(m.b[(r, c)], if r - 2 == c { 1.0 } else { 0.0 });
        }
    }
    // A is nilpotent: its only nonzero block maps angles into positions.
    assert_eq!(m.a * m.a, Matrix5::zeros());
    let f = dynamics_nominal(&z, &m.u0, &p);
    assert_abs_diff_eq!(m.eval(&z, &m.u0), f, epsilon = 1e-14);
}

#[test]
fn zoh_without_drift() {
    let p = ManipulatorParams::paper();
    let z = paper_initial_state();
    let mut m = linearize(&z, &ControlVector::zeros(), &p);
    m.omega = Vector5::new(0.1, -0.2, 0.3, 0.0, 1.0);
    let d = discretize_zoh(&m, 0.1).unwrap();
    let dm = d.discrete.unwrap();
    assert_abs_diff_eq!(dm.ad, Matrix5::identity(), epsilon = 1e-15);
    assert_abs_diff_eq!(dm.bd, m.b * 0.1, epsilon = 1e-15);
    assert_abs_diff_eq!(dm.omegad, m.omega * 0.1, epsilon = 1e-15);
}

#[test]
fn zoh_small_step_limit() {
    let p = ManipulatorParams::paper();
    let z = paper_initial_state();
    let m = linearize(&z, &ControlVector::new(0.1, 0.1, 0.1), &p);
    let d = discretize_zoh(&m, 1e-9).unwrap().discrete.unwrap();
    assert_abs_diff_eq!(d.ad, Matrix5::identity(), epsilon = 1e-8);
    assert!(d.bd.norm() < 1e-8);
}

#[test]
fn rejects_nonpositive_step() {
    let p = ManipulatorParams::paper();
    let m = linearize(&paper_initial_state(), &ControlVector::zeros(), &p);
    assert!(discretize_zoh(&m, 0.0).is_err());
}

#[test]
fn expm_of_diagonal_and_rotation() {
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -2.0, 0.0]));
    let e = expm(&d).unwrap();
    assert_abs_diff_eq!(e[(0, 0)], 1f64.exp(), epsilon = 1e-13);
    assert_abs_diff_eq!(e[(1, 1)], (-2f64).exp(), epsilon = 1e-14);
    assert_abs_diff_eq!(e[(2, 2)], 1.0, epsilon = 1e-15);

    let t = 3.0;
    let r = DMatrix::from_row_slice(2, 2, &[0.0, -t, t, 0.0]);
    let e = expm(&r).unwrap();
    assert_abs_diff_eq!(e[(0, 0)], t.cos(), epsilon = 1e-12);
    assert_abs_diff_eq!(e[(1, 0)], t.sin(), epsilon = 1e-12);
}

#[test]
fn budget_examples() {
    let p = ManipulatorParams::paper();
    let m = linearize(&paper_initial_state(), &ControlVector::zeros(), &p);
    let b = disturbance_budget(&m, 3.0, 0.0, 0.0, 0.01, 10f64.sqrt(), 1.0);
    assert_eq!(b.eta2, 0.0);
    assert_eq!(b.eta, 0.01);

    let b1 = disturbance_budget(&m, 3.0, 0.2, 0.0, 0.0, 2.0, 1.0);
    let b2 = disturbance_budget(&m, 3.0, 0.4, 0.0, 0.0, 2.0, 1.0);
    assert_eq!(b2.eta2, 2.0 * b1.eta2);
}

#[test]
fn hessian_bound_is_monotone_in_input_radius() {
    let p = ManipulatorParams::paper();
    let z = paper_initial_state();
    let u = ControlVector::new(0.1, -0.05, 0.0);
    let mut prev = 0.0;
    for k in 0..20 {
        let v = hessian_bound(&z, &u, &p, 0.0, k as f64 * 0.05);
        assert!(v >= prev);
        prev = v;
    }
}

mod oracles {
    use super::*;
    use nalgebra::{SMatrix, Vector3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tubempc::model::{lipschitz_constants, paper_initial_state};

    fn paper() -> ManipulatorParams {
        ManipulatorParams::paper()
    }

    fn point(rng: &mut ChaCha8Rng, p: &ManipulatorParams) -> (StateVector, ControlVector) {
        let theta = std::array::from_fn(|i| rng.random_range(p.theta_lo[i]..=p.theta_hi[i]));
        let u = Vector3::from_fn(|i, _| rng.random_range(-p.omega_max[i]..=p.omega_max[i]));
        (StateVector::from_angles(theta, p), ControlVector(u))
    }

    fn split(w: &SMatrix<f64, 8, 1>) -> (StateVector, ControlVector) {
        (
            StateVector(Vector5::from_fn(|i, _| w[i])),
            ControlVector(Vector3::from_fn(|i, _| w[5 + i])),
        )
    }

    fn join(z: &StateVector, u: &ControlVector) -> SMatrix<f64, 8, 1> {
        SMatrix::<f64, 8, 1>::from_fn(|i, _| if i < 5 { z.0[i] } else { u.0[i - 5] })
    }

    /// `[A B]` from the analytic linearization.
    fn jacobian(w: &SMatrix<f64, 8, 1>, p: &ManipulatorParams) -> SMatrix<f64, 5, 8> {
        let (z, u) = split(w);
        let m = linearize(&z, &u, p);
        let mut j = SMatrix::<f64, 5, 8>::zeros();
        j.fixed_view_mut::<5, 5>(0, 0).copy_from(&m.a);
        j.fixed_view_mut::<5, 3>(0, 5).copy_from(&m.b);
        j
    }

    /// Frobenius norm of the second-derivative tensor by central differences
    /// of the Jacobian.
    fn tensor_norm(z: &StateVector, u: &ControlVector, p: &ManipulatorParams) -> f64 {
        let w = join(z, u);
        let h = 1e-5;
        let mut sum = 0.0;
        for k in 0..8 {
            let mut wp = w;
            let mut wm = w;
            wp[k] += h;
            wm[k] -= h;
            sum += ((jacobian(&wp, p) - jacobian(&wm, p)) / (2.0 * h)).norm_squared();
        }
        sum.sqrt()
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let p = paper();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..100 {
            let (z, u) = point(&mut rng, &p);
            let m = linearize(&z, &u, &p);
            let w = join(&z, &u);
            let mut fd = SMatrix::<f64, 5, 8>::zeros();
            for k in 0..8 {
                let mut wp = w;
                let mut wm = w;
                wp[k] += h;
                wm[k] -= h;
                let (zp, up) = split(&wp);
                let (zm, um) = split(&wm);
                let col = (dynamics_nominal(&zp, &up, &p) - dynamics_nominal(&zm, &um, &p)) / (2.0 * h);
                fd.set_column(k, &col);
            }
            let a_fd = fd.fixed_view::<5, 5>(0, 0).into_owned();
            let b_fd = fd.fixed_view::<5, 3>(0, 5).into_owned();
            assert!((m.a - a_fd).norm() <= 1e-5 * a_fd.norm().max(1e-3), "A: {}", (m.a - a_fd).norm());
            assert!((m.b - b_fd).norm() <= 1e-5 * b_fd.norm(), "B: {}", (m.b - b_fd).norm());
        }
    }

    #[test]
    fn offset_reproduces_field_at_operating_point() {
        let p = paper();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let (z, u) = point(&mut rng, &p);
            let m = linearize(&z, &u, &p);
            let f = dynamics_nominal(&z, &u, &p);
            assert!((m.eval(&z, &u) - f).amax() <= 1e-14 * (1.0 + f.amax() + z.0.amax()));
        }
    }

    #[test]
    fn hessian_bound_is_exact_at_rest() {
        let p = paper();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (z, _) = point(&mut rng, &p);
            let u = ControlVector::zeros();
            let exact = tensor_norm(&z, &u, &p);
            let bound = hessian_bound(&z, &u, &p, 0.0, 0.0);
            assert!((bound - exact).abs() <= 1e-6 * exact, "{bound} vs {exact}");
        }
    }

    #[test]
    fn hessian_bound_covers_sampled_box() {
        let p = paper();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (z0, u0) = point(&mut rng, &p);
        let (rz, ru) = (0.3, 0.2);
        let bound = hessian_bound(&z0, &u0, &p, rz, ru);
        for _ in 0..10_000 {
            let dz = Vector5::from_fn(|_, _| rng.random_range(-1.0..=1.0));
            let du = Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0));
            let z = StateVector(z0.0 + dz.normalize() * rz * rng.random::<f64>());
            let u = ControlVector(u0.0 + du.normalize() * ru * rng.random::<f64>());
            assert!(tensor_norm(&z, &u, &p) <= bound * (1.0 + 1e-6));
        }
    }

    #[test]
    fn linearization_error_stays_inside_budget() {
        let p = paper();
        let lip = lipschitz_constants(&p);
        let delta = 0.1;
        let (dz, du) = excursion_envelopes(&p, delta);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut violations = 0;
        for _ in 0..10_000 {
            let (z0, u0) = point(&mut rng, &p);
            let m = linearize(&z0, &u0, &p);
            let eta_r = hessian_bound(&z0, &u0, &p, dz, du);
            let b = disturbance_budget(&m, eta_r, dz, du, p.eta1, lip.l1, lip.l2);
            assert_eq!(b.eta, b.eta1 + b.eta2);
            let ddz = Vector5::from_fn(|_, _| rng.random_range(-1.0..=1.0)).normalize() * dz * rng.random::<f64>();
            let ddu = Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0)).normalize() * du * rng.random::<f64>();
            let z = StateVector(z0.0 + ddz);
            let u = ControlVector(u0.0 + ddu);
            if (dynamics_nominal(&z, &u, &p) - m.eval(&z, &u)).norm() > b.eta2 {
                violations += 1;
            }
        }
        assert_eq!(violations, 0);
    }

    fn rk4_affine(m: &LinearModel, z: &Vector5<f64>, u: &Vector3<f64>, delta: f64, n: usize) -> Vector5<f64> {
        let f = |x: &Vector5<f64>| m.a * x + m.b * u + m.omega;
        let h = delta / n as f64;
        let mut x = *z;
        for _ in 0..n {
            let k1 = f(&x);
            let k2 = f(&(x + k1 * (0.5 * h)));
            let k3 = f(&(x + k2 * (0.5 * h)));
            let k4 = f(&(x + k3 * h));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        x
    }

    fn euler_affine(m: &LinearModel, z: &Vector5<f64>, u: &Vector3<f64>, delta: f64, n: usize) -> Vector5<f64> {
        let h = delta / n as f64;
        let mut x = *z;
        for _ in 0..n {
            x += (m.a * x + m.b * u + m.omega) * h;
        }
        x
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn zoh_step_matches_fine_integration(
            theta in prop::array::uniform3(0.0f64..3.2),
            w0 in prop::array::uniform3(-0.2f64..0.2),
            u in prop::array::uniform3(-0.2f64..0.2),
            delta in 0.01f64..0.5,
        ) {
            let p = paper();
            let z0 = StateVector::from_angles(theta, &p);
            let m = discretize_zoh(&linearize(&z0, &ControlVector(Vector3::from(w0)), &p), delta).unwrap();
            let d = m.discrete().unwrap();
            let u = Vector3::from(u);
            let exact = d.step(&z0.0, &u);
            let rk = rk4_affine(&m, &z0.0, &u, delta, 10_000);
            prop_assert!((exact - rk).amax() <= 1e-8);
            // Euler's global error is h·δ/2·max‖d²z/dt²‖ to first order.
            let n = 10_000;
            let acc = (m.a * (m.a * z0.0 + m.b * u + m.omega)).amax();
            let eu = euler_affine(&m, &z0.0, &u, delta, n);
            prop_assert!((exact - eu).amax() <= 1e-8 + delta * delta / n as f64 * acc);
        }
    }

    #[test]
    fn linearize_and_discretize_are_deterministic() {
        let p = paper();
        let z = paper_initial_state();
        let u = ControlVector::new(0.1, -0.07, 0.02);
        let a = discretize_zoh(&linearize(&z, &u, &p), 0.1).unwrap();
        let b = discretize_zoh(&linearize(&z, &u, &p), 0.1).unwrap();
        assert_eq!(a, b);
    }
}
