use benjamin::accel::{cycle, mpe_extrapolate, Evaluation, ExtrapolationWindow, MpeConfig};
use benjamin::analysis::{invariant_energy, invariant_mass, invariant_momentum};
use benjamin::evolve::{yoshida_step, StepperConfig};
use benjamin::spectral::{apply_multiplier, EquationParams, MultiplierSymbol, PeriodicGrid, SpectralField};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, n)
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn transform_is_linear(x in values(32), y in values(32), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let g = PeriodicGrid::new(5.0, 32).unwrap();
        let z: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (fx, fy, fz) = (g.forward(&x).unwrap(), g.forward(&y).unwrap(), g.forward(&z).unwrap());
        for k in 0..32 {
            prop_assert!((fz[k] - (fx[k] * a + fy[k] * b)).norm() <= 1e-12 * 30.0);
        }
    }

    #[test]
    fn real_data_has_hermitian_coefficients(x in values(64)) {
        let g = PeriodicGrid::new(3.0, 64).unwrap();
        let f = g.forward(&x).unwrap();
        for j in (1..64).filter(|&j| j != 32) {
            let k = g.mode_index(j);
            let conj = f[g.slot(-k)].conj();
            prop_assert!((f[j] - conj).norm() <= 1e-13 * 10.0);
        }
        let back = g.inverse(&f).unwrap();
        prop_assert!(max_diff(&back, &x) <= 1e-12);
    }

    #[test]
    fn even_symbols_preserve_parity(x in values(33), e in 0.2f64..3.0) {
        // f(x_j) = f(x_{-j}) with x_0 = -l, so reflection is j -> N - j.
        let g = PeriodicGrid::new(7.0, 64).unwrap();
        let mut v = vec![0.0; 64];
        for j in 0..=32 {
            v[j] = x[j];
            v[(64 - j) % 64] = x[j];
        }
        let f = SpectralField::from_values(&g, v).unwrap();
        let s = MultiplierSymbol::from_fn(&g, |k| k.abs().powf(e) - 0.5 * k * k);
        let out = apply_multiplier(&s, &f).unwrap();
        let w = out.values();
        for j in 1..64 {
            prop_assert!((w[j] - w[64 - j]).abs() <= 1e-11 * f.max_abs().max(1.0) * 20.0);
        }
    }

    #[test]
    fn translation_by_grid_steps_is_a_shift(x in values(32), s in 0usize..32) {
        // The Nyquist mode has no well-defined shift, so it is removed first.
        let g = PeriodicGrid::new(4.0, 32).unwrap();
        let mut c = g.forward(&x).unwrap();
        c[g.nyquist_slot()] = Complex64::new(0.0, 0.0);
        let x = g.inverse(&c).unwrap();
        let f = SpectralField::from_values(&g, x.clone()).unwrap();
        let t = f.translated(s as f64 * g.step());
        for j in 0..32 {
            prop_assert!((t.values()[(j + s) % 32] - x[j]).abs() <= 1e-11);
        }
    }
}

/// Affine map `y -> A y + b` whose matrix has `degree` distinct eigenvalues.
fn affine_problem(dim: usize, degree: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eig: Vec<f64> = (0..degree).map(|i| -0.7 + 1.4 * i as f64 / degree.max(2) as f64 + 0.05 * rng.gen::<f64>()).collect();
    let diag = DMatrix::from_fn(dim, dim, |i, j| if i == j { eig[i % degree] } else { 0.0 });
    let s = DMatrix::from_fn(dim, dim, |i, j| if i == j { 2.0 } else { 0.0 } + rng.gen_range(-0.4..0.4));
    let a = &s * diag * s.clone().try_inverse().unwrap();
    let b = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
    (a, b)
}

fn fixed_point_oracle(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.nrows();
    (DMatrix::identity(n, n) - a).lu().solve(b).unwrap()
}

#[test]
fn mpe_recovers_affine_fixed_points() {
    for dim in 2..=10 {
        for degree in 1..=dim.min(6) {
            let (a, b) = affine_problem(dim, degree, (dim * 100 + degree) as u64);
            let exact = fixed_point_oracle(&a, &b);
            let mut y = DVector::from_fn(dim, |i, _| (i as f64 * 0.37).sin());
            let mut w = ExtrapolationWindow::new(6);
            while !w.is_full() {
                w.push(y.as_slice().to_vec()).unwrap();
                y = &a * &y + &b;
            }
            let s = mpe_extrapolate(&w).unwrap();
            let err = max_diff(&s, exact.as_slice()) / exact.amax().max(1.0);
            assert!(err <= 1e-10, "dim {dim} degree {degree}: {err:e}");
        }
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn mpe_is_translation_equivariant(seed in 0u64..1000, shift in values(5)) {
        let (a, b) = affine_problem(5, 5, seed);
        let mut y = DVector::from_fn(5, |i, _| i as f64);
        let mut w = ExtrapolationWindow::new(3);
        let mut ws = ExtrapolationWindow::new(3);
        while !w.is_full() {
            let v = y.as_slice().to_vec();
            ws.push(v.iter().zip(&shift).map(|(p, q)| p + q).collect()).unwrap();
            w.push(v).unwrap();
            y = &a * &y + &b;
        }
        let s = mpe_extrapolate(&w).unwrap();
        let ss = mpe_extrapolate(&ws).unwrap();
        let shifted: Vec<f64> = s.iter().zip(&shift).map(|(p, q)| p + q).collect();
        prop_assert!(max_diff(&ss, &shifted) <= 1e-8 * (1.0 + s.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
    }

    #[test]
    fn mpe_is_scale_equivariant(seed in 0u64..1000, scale in 0.01f64..100.0) {
        let (a, b) = affine_problem(6, 4, seed);
        let mut y = DVector::from_fn(6, |i, _| 1.0 - i as f64);
        let mut w = ExtrapolationWindow::new(6);
        let mut ws = ExtrapolationWindow::new(6);
        while !w.is_full() {
            let v = y.as_slice().to_vec();
            ws.push(v.iter().map(|p| p * scale).collect()).unwrap();
            w.push(v).unwrap();
            y = &a * &y + &b;
        }
        let s = mpe_extrapolate(&w).unwrap();
        let ss = mpe_extrapolate(&ws).unwrap();
        let scaled: Vec<f64> = s.iter().map(|p| p * scale).collect();
        prop_assert!(max_diff(&ss, &scaled) <= 1e-9 * scale * (1.0 + s.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
    }
}

#[test]
fn restarted_cycle_reaches_affine_fixed_point() {
    let (a, b) = affine_problem(9, 6, 7);
    let exact = fixed_point_oracle(&a, &b);
    let mut map = |y: &[f64]| -> benjamin::Result<Evaluation> {
        let v = DVector::from_column_slice(y);
        let image = &a * &v + &b;
        let metric = (&image - &v).norm();
        Ok(Evaluation { metric, image: image.as_slice().to_vec() })
    };
    let out = cycle(&mut map, vec![0.0; 9], &MpeConfig::default(), |m| m < 1e-12).unwrap();
    assert!(out.stopped);
    assert!(out.evaluations <= 3 * 8, "{} evaluations", out.evaluations);
    assert!(max_diff(&out.solution, exact.as_slice()) <= 1e-10);
}

fn small_wave(grid: &PeriodicGrid, amp: f64, width: f64, shift: f64) -> SpectralField {
    SpectralField::from_fn(grid, |x| amp / ((x - shift) / width).cosh().powi(2))
}

proptest! {
    #![proptest_config(config(8))]

    #[test]
    fn composition_step_is_time_reversible(amp in 0.1f64..1.0, width in 1.0f64..3.0, q in 1u32..4) {
        let grid = PeriodicGrid::new(16.0, 64).unwrap();
        let p = EquationParams::gbenjamin(q, 1.2);
        let cfg = StepperConfig::default();
        let u = small_wave(&grid, amp, width, 0.0);
        let fwd = yoshida_step(&u, 0.01, &p, &cfg).unwrap();
        let back = yoshida_step(&fwd, -0.01, &p, &cfg).unwrap();
        prop_assert!(max_diff(back.values(), u.values()) <= 1e-11);
    }

    #[test]
    fn composition_step_conserves_invariants(amp in 0.1f64..1.0, width in 1.5f64..3.0, shift in -4.0f64..4.0) {
        let grid = PeriodicGrid::new(16.0, 128).unwrap();
        let p = EquationParams::gbenjamin(2, 1.5);
        let cfg = StepperConfig::default();
        let mut u = small_wave(&grid, amp, width, shift);
        let (c0, i0, e0) = (invariant_mass(&u), invariant_momentum(&u), invariant_energy(&u, &p));
        for _ in 0..20 {
            u = yoshida_step(&u, 0.01, &p, &cfg).unwrap();
        }
        prop_assert!((invariant_mass(&u) - c0).abs() <= 1e-12);
        prop_assert!((invariant_momentum(&u) - i0).abs() <= 1e-11 * i0);
        prop_assert!((invariant_energy(&u, &p) - e0).abs() <= 1e-8 * e0.abs().max(1e-3));
    }
}

#[test]
fn composition_is_fourth_order_on_a_linear_problem() {
    // Tiny data makes the flow linear; compare with the exact exponential.
    let grid = PeriodicGrid::new(8.0, 32).unwrap();
    let p = EquationParams::new(0.5, 1, 1, 1.0, 1.0).unwrap();
    let u0 = SpectralField::from_fn(&grid, |x| 1e-9 * ((0.25 * std::f64::consts::PI * x).cos() + (0.125 * std::f64::consts::PI * x).sin()));
    let t = 5.0;
    let exact: Vec<Complex64> = u0
        .coeffs()
        .iter()
        .zip(grid.wavenumbers())
        .map(|(z, &k)| z * Complex64::new(0.0, k * p.dispersion_at(k) * t).exp())
        .collect();
    let exact = SpectralField::from_coeffs(&grid, exact).unwrap();
    let err = |dt: f64| {
        let mut u = u0.clone();
        let cfg = StepperConfig { dt, stage_tol: 1e-15, ..Default::default() };
        for _ in 0..(t / dt).round() as usize {
            u = yoshida_step(&u, dt, &p, &cfg).unwrap();
        }
        max_diff(u.values(), exact.values())
    };
    let (e1, e2) = (err(0.5), err(0.25));
    let ratio = e1 / e2;
    assert!((12.0..20.0).contains(&ratio), "ratio {ratio}: {e1:e} {e2:e}");
}
