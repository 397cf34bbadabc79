//! Periodic grids, discrete Fourier transforms and Fourier-multiplier
//! operators for the Benjamin equation family
//!
//! ```text
//! u_t - L u_x + F(u)_x = 0,   L^(k) = delta |k|^{2m} - gamma |k|^{2r},   F(u) = u^{q+1}/(q+1)
//! ```
//!
//! # Transform convention
//!
//! A grid with half-length `l` and `N` nodes has nodes `x_j = -l + j h`,
//! `h = 2l/N`. Coefficients are stored in FFT order: storage slot `j`
//! holds mode index `k = j` for `j < N/2` and `k = j - N` otherwise, so the
//! Nyquist index `-N/2` sits in slot `N/2`. The physical wavenumber of mode
//! `k` is `kappa_k = pi k / l`.
//!
//! The forward transform carries the `1/N` factor:
//!
//! ```text
//! c_k = (1/N) sum_j f_j exp(-2 pi i j k / N),     f_j = sum_k c_k exp(i kappa_k (x_j + l))
//! ```
//!
//! so `c_0` is the grid mean and `h sum_j f_j g_j = 2l sum_k c_k conj(d_k)`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters `(r, m, q, gamma, delta)` of one equation of the family,
/// plus the wave speed `c_s` when a traveling wave is involved.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquationParams {
    pub r: f64,
    pub m: u32,
    pub q: u32,
    pub gamma: f64,
    pub delta: f64,
    pub speed: Option<f64>,
}

impl EquationParams {
    pub fn new(r: f64, m: u32, q: u32, gamma: f64, delta: f64) -> Result<Self> {
        let p = EquationParams {
            r,
            m,
            q,
            gamma,
            delta,
            speed: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Generalized Benjamin equation (`r = 1/2`, `m = 1`, `delta = 1`).
    pub fn gbenjamin(q: u32, gamma: f64) -> Self {
        EquationParams {
            r: 0.5,
            m: 1,
            q,
            gamma,
            delta: 1.0,
            speed: None,
        }
    }

    pub fn with_speed(mut self, c_s: f64) -> Self {
        self.speed = Some(c_s);
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::invalid("m must be a positive integer"));
        }
        if !(self.r >= 0.0 && self.r < self.m as f64) {
            return Err(Error::invalid(format!(
                "r = {} must satisfy 0 <= r < m = {}",
                self.r, self.m
            )));
        }
        if self.q < 1 {
            return Err(Error::invalid("q must be a positive integer"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid(format!("delta = {} must be positive", self.delta)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma = {} must be non-negative", self.gamma)));
        }
        if let Some(c) = self.speed {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid(format!("wave speed c_s = {c} must be positive")));
            }
        }
        Ok(())
    }

    /// The wave speed, required by traveling-wave computations.
    pub fn c_s(&self) -> Result<f64> {
        self.speed
            .ok_or_else(|| Error::invalid("wave speed c_s is required for this operation"))
    }

    /// Linear dispersion symbol `delta |kappa|^{2m} - gamma |kappa|^{2r}`.
    pub fn dispersion_at(&self, kappa: f64) -> f64 {
        let a = kappa.abs();
        self.delta * abs_pow(a, 2.0 * self.m as f64) - self.gamma * abs_pow(a, 2.0 * self.r)
    }
}

/// `|x|^e` with `|x| = 0` mapped to zero for positive exponents.
#[inline]
pub fn abs_pow(x: f64, e: f64) -> f64 {
    let a = x.abs();
    if e == 0.0 {
        1.0
    } else if a == 0.0 {
        0.0
    } else {
        (e * a.ln()).exp()
    }
}

struct GridInner {
    half_length: f64,
    n: usize,
    h: f64,
    wavenumbers: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Uniform periodic grid on `(-l, l)`. Cheap to clone; the transform plans
/// are shared.
#[derive(Clone)]
pub struct PeriodicGrid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for PeriodicGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicGrid")
            .field("l", &self.inner.half_length)
            .field("n", &self.inner.n)
            .field("h", &self.inner.h)
            .finish()
    }
}

impl PartialEq for PeriodicGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.n == other.inner.n
                && self.inner.half_length.to_bits() == other.inner.half_length.to_bits())
    }
}

/// Builds the grid `x_j = -l + j h`, `h = 2l/N`.
pub fn make_grid(l: f64, n: usize) -> Result<PeriodicGrid> {
    PeriodicGrid::new(l, n)
}

impl PeriodicGrid {
    pub fn new(l: f64, n: usize) -> Result<Self> {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::invalid(format!("half-length l = {l} must be positive")));
        }
        if n < 8 || n % 2 != 0 {
            return Err(Error::invalid(format!("N = {n} must be even and at least 8")));
        }
        let wavenumbers = (0..n)
            .map(|j| std::f64::consts::PI * mode_of_slot(j, n) as f64 / l)
            .collect();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        Ok(PeriodicGrid {
            inner: Arc::new(GridInner {
                half_length: l,
                n,
                h: 2.0 * l / n as f64,
                wavenumbers,
                forward,
                inverse,
            }),
        })
    }

    pub fn half_length(&self) -> f64 {
        self.inner.half_length
    }

    pub fn len(&self) -> usize {
        self.inner.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        self.inner.h
    }

    pub fn node(&self, j: usize) -> f64 {
        -self.inner.half_length + j as f64 * self.inner.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.node(j)).collect()
    }

    /// Physical wavenumbers in storage order.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.inner.wavenumbers
    }

    /// Signed mode index stored in slot `j`.
    pub fn mode_index(&self, j: usize) -> i64 {
        mode_of_slot(j, self.len())
    }

    /// Storage slot of mode index `k`, `-N/2 <= k < N/2`.
    pub fn slot(&self, k: i64) -> usize {
        let n = self.len() as i64;
        debug_assert!(-n / 2 <= k && k < n / 2);
        k.rem_euclid(n) as usize
    }

    pub fn nyquist_slot(&self) -> usize {
        self.len() / 2
    }

    /// Wraps `x` into `[-l, l)`.
    pub fn wrap(&self, x: f64) -> f64 {
        let l = self.half_length();
        (x + l).rem_euclid(2.0 * l) - l
    }

    pub fn check_same(&self, other: &PeriodicGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected_l: self.half_length(),
                expected_n: self.len(),
                found_l: other.half_length(),
                found_n: other.len(),
            })
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == self.len() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "array length {len} does not match grid size {}",
                self.len()
            )))
        }
    }

    /// Forward transform of real grid values.
    pub fn forward(&self, values: &[f64]) -> Result<Vec<Complex64>> {
        self.check_len(values.len())?;
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward_in_place(&mut buf);
        Ok(buf)
    }

    /// Inverse transform, returning the real part.
    pub fn inverse(&self, coeffs: &[Complex64]) -> Result<Vec<f64>> {
        Ok(self.inverse_complex(coeffs)?.into_iter().map(|z| z.re).collect())
    }

    /// Inverse transform keeping the imaginary part (realness diagnostics).
    pub fn inverse_complex(&self, coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(coeffs.len())?;
        let mut buf = coeffs.to_vec();
        self.inverse_in_place(&mut buf);
        Ok(buf)
    }

    /// In-place forward transform including the `1/N` normalization.
    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len());
        self.inner.forward.process(buf);
        let s = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|z| *z *= s);
    }

    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len());
        self.inner.inverse.process(buf);
    }

    pub(crate) fn forward_with_scratch(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.inner.forward.process_with_scratch(buf, scratch);
        let s = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|z| *z *= s);
    }

    pub(crate) fn inverse_with_scratch(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.inner.inverse.process_with_scratch(buf, scratch);
    }

    pub(crate) fn scratch_len(&self) -> usize {
        self.inner
            .forward
            .get_inplace_scratch_len()
            .max(self.inner.inverse.get_inplace_scratch_len())
    }
}

fn mode_of_slot(j: usize, n: usize) -> i64 {
    if j < n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Real periodic function held as grid values and Fourier coefficients,
/// kept synchronized.
#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: PeriodicGrid,
    values: Vec<f64>,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn from_values(grid: &PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        let coeffs = grid.forward(&values)?;
        Ok(SpectralField {
            grid: grid.clone(),
            values,
            coeffs,
        })
    }

    /// Builds a field from coefficients. The grid values are the real part
    /// of the inverse transform; the coefficients are re-derived from those
    /// values so that both representations describe the same real field.
    pub fn from_coeffs(grid: &PeriodicGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        let values = grid.inverse(&coeffs)?;
        Self::from_values(grid, values)
    }

    pub fn from_fn(grid: &PeriodicGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().into_iter().map(f).collect();
        Self::from_values(grid, values).expect("length matches grid")
    }

    pub fn zeros(grid: &PeriodicGrid) -> Self {
        SpectralField {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
            coeffs: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scaled(&self, s: f64) -> SpectralField {
        SpectralField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add(&self, other: &SpectralField) -> Result<SpectralField> {
        self.grid.check_same(&other.grid)?;
        Ok(SpectralField {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Field translated by `shift` (spectrally exact for band-limited data).
    pub fn translated(&self, shift: f64) -> SpectralField {
        let coeffs: Vec<Complex64> = self
            .coeffs
            .iter()
            .zip(self.grid.wavenumbers())
            .enumerate()
            .map(|(j, (c, &kappa))| {
                if j == self.grid.nyquist_slot() {
                    Complex64::new(0.0, 0.0)
                } else {
                    c * Complex64::from_polar(1.0, -kappa * shift)
                }
            })
            .collect();
        SpectralField::from_coeffs(&self.grid, coeffs).expect("length matches grid")
    }
}

/// Real, even Fourier-multiplier symbol tabulated over the modes of a grid.
#[derive(Clone, Debug)]
pub struct MultiplierSymbol {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl MultiplierSymbol {
    /// Tabulates `sigma(|kappa_k|)`.
    pub fn from_fn(grid: &PeriodicGrid, sigma: impl Fn(f64) -> f64) -> Self {
        let values = grid.wavenumbers().iter().map(|k| sigma(k.abs())).collect();
        MultiplierSymbol {
            grid: grid.clone(),
            values,
        }
    }

    pub fn constant(grid: &PeriodicGrid, value: f64) -> Self {
        Self::from_fn(grid, |_| value)
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Symbol value at signed mode index `k`.
    pub fn at_mode(&self, k: i64) -> f64 {
        self.values[self.grid.slot(k)]
    }

    pub fn min(&self) -> (i64, f64) {
        let (j, v) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (j, &v)| if v < acc.1 { (j, v) } else { acc });
        (self.grid.mode_index(j), v)
    }
}

/// `sigma_k = delta |kappa_k|^{2m} - gamma |kappa_k|^{2r}`.
pub fn dispersion_symbol(p: &EquationParams, grid: &PeriodicGrid) -> MultiplierSymbol {
    MultiplierSymbol::from_fn(grid, |k| p.dispersion_at(k))
}

/// `c_s + delta |kappa_k|^{2m} - gamma |kappa_k|^{2r}`.
pub fn resolvent_symbol(p: &EquationParams, grid: &PeriodicGrid) -> Result<MultiplierSymbol> {
    let c = p.c_s()?;
    Ok(MultiplierSymbol::from_fn(grid, |k| c + p.dispersion_at(k)))
}

pub fn apply_multiplier(symbol: &MultiplierSymbol, f: &SpectralField) -> Result<SpectralField> {
    symbol.grid.check_same(&f.grid)?;
    let coeffs = f
        .coeffs
        .iter()
        .zip(&symbol.values)
        .map(|(c, s)| c * s)
        .collect();
    SpectralField::from_coeffs(&f.grid, coeffs)
}

/// Pseudospectral derivative of order `order`, symbol `(i kappa)^order`.
/// The Nyquist mode is zeroed for odd orders.
pub fn differentiate(f: &SpectralField, order: u32) -> SpectralField {
    let grid = &f.grid;
    let ny = grid.nyquist_slot();
    let coeffs = f
        .coeffs
        .iter()
        .zip(grid.wavenumbers())
        .enumerate()
        .map(|(j, (c, &k))| {
            if order % 2 == 1 && j == ny {
                Complex64::new(0.0, 0.0)
            } else {
                c * Complex64::new(0.0, k).powu(order)
            }
        })
        .collect();
    SpectralField::from_coeffs(grid, coeffs).expect("length matches grid")
}

/// Pointwise `f^{q+1}/(q+1)`.
pub fn nonlinearity(f: &SpectralField, q: u32) -> SpectralField {
    nonlinearity_with(f, q, false)
}

/// Pointwise `f^{q+1}/(q+1)`, optionally truncated by the 2/3 rule.
pub fn nonlinearity_with(f: &SpectralField, q: u32, dealias: bool) -> SpectralField {
    let p = (q + 1) as i32;
    let inv = 1.0 / (q + 1) as f64;
    let values: Vec<f64> = f.values.iter().map(|v| v.powi(p) * inv).collect();
    let out = SpectralField::from_values(&f.grid, values).expect("length matches grid");
    if dealias {
        dealiased(&out)
    } else {
        out
    }
}

/// Zeroes every mode with `|k| > N/3`.
pub fn dealiased(f: &SpectralField) -> SpectralField {
    let n = f.grid.len() as i64;
    let coeffs = f
        .coeffs
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            if 3 * f.grid.mode_index(j).abs() > n {
                Complex64::new(0.0, 0.0)
            } else {
                c
            }
        })
        .collect();
    SpectralField::from_coeffs(&f.grid, coeffs).expect("length matches grid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn grid_on_two_pi() {
        let g = make_grid(PI, 8).unwrap();
        assert_relative_eq!(g.node(0), -PI);
        assert_relative_eq!(g.node(7), 3.0 * PI / 4.0, epsilon = 1e-15);
        let mut ks: Vec<f64> = g.wavenumbers().to_vec();
        ks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (i, k) in ks.iter().enumerate() {
            assert_relative_eq!(*k, i as f64 - 4.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn grid_step_matches_evolution_setup() {
        let g = make_grid(128.0, 2048).unwrap();
        assert_eq!(g.step(), 0.125);
        assert_eq!(g.step() * g.len() as f64, 256.0);
    }

    #[test]
    fn grid_with_unit_half_length() {
        let g = PeriodicGrid::new(1.0, 8).unwrap();
        assert_relative_eq!(g.wavenumbers()[g.slot(-2)], -2.0 * PI);
        assert_relative_eq!(g.wavenumbers()[g.slot(1)], PI);
        assert_eq!(g.mode_index(4), -4);
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        assert!(make_grid(0.0, 16).is_err());
        assert!(make_grid(-1.0, 16).is_err());
        assert!(make_grid(1.0, 15).is_err());
        assert!(make_grid(1.0, 4).is_err());
    }

    #[test]
    fn constant_has_only_mean_mode() {
        let g = make_grid(3.0, 16).unwrap();
        let f = SpectralField::from_fn(&g, |_| 1.0);
        assert_relative_eq!(f.coeffs()[0].re, 1.0, epsilon = 1e-15);
        for c in &f.coeffs()[1..] {
            assert!(c.norm() < 1e-15);
        }
    }

    #[test]
    fn cosine_has_two_modes() {
        let l = 5.0;
        let g = make_grid(l, 32).unwrap();
        let f = SpectralField::from_fn(&g, |x| (PI * x / l).cos());
        let (a, b) = (f.coeffs()[g.slot(1)], f.coeffs()[g.slot(-1)]);
        assert_relative_eq!(a.norm(), 0.5, epsilon = 1e-14);
        assert_relative_eq!(b.norm(), 0.5, epsilon = 1e-14);
        for (j, c) in f.coeffs().iter().enumerate() {
            if g.mode_index(j).abs() != 1 {
                assert!(c.norm() < 1e-14);
            }
        }
    }

    #[test]
    fn round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = make_grid(10.0, 256).unwrap();
        let v: Vec<f64> = (0..256).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let c = g.forward(&v).unwrap();
        let back = g.inverse(&c).unwrap();
        let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let err = v.iter().zip(&back).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-13 * scale, "{err}");
        // Parseval with the 1/N convention
        let lhs: f64 = g.step() * v.iter().map(|x| x * x).sum::<f64>();
        let rhs: f64 = 2.0 * g.half_length() * c.iter().map(|z| z.norm_sqr()).sum::<f64>();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-13);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let g = make_grid(1.0, 16).unwrap();
        assert!(g.forward(&[0.0; 8]).is_err());
        assert!(SpectralField::from_values(&g, vec![0.0; 17]).is_err());
    }

    #[test]
    fn dispersion_symbol_examples() {
        let g = make_grid(PI, 16).unwrap();
        let kdv = EquationParams::new(0.0, 1, 1, 0.0, 1.0).unwrap();
        assert_relative_eq!(dispersion_symbol(&kdv, &g).at_mode(2), 4.0, epsilon = 1e-13);
        let gb = EquationParams::gbenjamin(2, 1.5);
        let s = dispersion_symbol(&gb, &g);
        assert_relative_eq!(s.at_mode(1), -0.5, epsilon = 1e-14);
        assert_eq!(s.at_mode(0), 0.0);
        let p = EquationParams::new(1.0, 2, 1, 2.0, 1.0).unwrap();
        assert!(p.dispersion_at(2f64.sqrt()).abs() < 1e-14);
        for k in 1..8 {
            assert_eq!(s.at_mode(k), s.at_mode(-k));
        }
    }

    #[test]
    fn identity_and_second_derivative() {
        let l = 4.0;
        let g = make_grid(l, 64).unwrap();
        let f = SpectralField::from_fn(&g, |x| (PI * x / l).sin());
        let id = apply_multiplier(&MultiplierSymbol::constant(&g, 1.0), &f).unwrap();
        for (a, b) in id.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-14);
        }
        let kdv = EquationParams::new(0.0, 1, 1, 0.0, 1.0).unwrap();
        let out = apply_multiplier(&dispersion_symbol(&kdv, &g), &f).unwrap();
        let k2 = (PI / l).powi(2);
        for (a, b) in out.values().iter().zip(f.values()) {
            assert!((a - k2 * b).abs() < 1e-13);
        }
    }

    #[test]
    fn multiplier_grid_mismatch() {
        let g1 = make_grid(4.0, 32).unwrap();
        let g2 = make_grid(4.0, 64).unwrap();
        let f = SpectralField::zeros(&g2);
        assert!(matches!(
            apply_multiplier(&MultiplierSymbol::constant(&g1, 1.0), &f),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn resolvent_against_direct_summation() {
        // gKdV profile, q = 2, resolvent of the gBenjamin family; O(N^2) DFT oracle.
        let g = make_grid(16.0, 128).unwrap();
        let p = EquationParams::gbenjamin(2, 1.2).with_speed(1.0);
        let f = SpectralField::from_fn(&g, |x| 6f64.sqrt() / x.cosh());
        let out = apply_multiplier(&resolvent_symbol(&p, &g).unwrap(), &f).unwrap();
        let n = g.len();
        let nodes = g.nodes();
        for (i, &xi) in nodes.iter().enumerate().step_by(7) {
            let mut acc = 0.0;
            for k in -(n as i64) / 2..(n as i64) / 2 {
                let kappa = PI * k as f64 / g.half_length();
                let mut ck = Complex64::new(0.0, 0.0);
                for (j, &xj) in nodes.iter().enumerate() {
                    ck += f.values()[j] * Complex64::from_polar(1.0, -kappa * (xj + g.half_length()));
                }
                ck /= n as f64;
                let sigma = 1.0 + kappa * kappa - 1.2 * kappa.abs();
                acc += (ck * sigma * Complex64::from_polar(1.0, kappa * (xi + g.half_length()))).re;
            }
            assert!((acc - out.values()[i]).abs() < 1e-12, "{} vs {}", acc, out.values()[i]);
        }
    }

    #[test]
    fn nonlinearity_examples() {
        let g = make_grid(PI, 32).unwrap();
        let z = nonlinearity(&SpectralField::zeros(&g), 3);
        assert_eq!(z.max_abs(), 0.0);
        let one = nonlinearity(&SpectralField::from_fn(&g, |_| 1.0), 2);
        for v in one.values() {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        // cos^2/2 = 1/4 + cos(2x)/4
        let c = nonlinearity(&SpectralField::from_fn(&g, |x| (3.0 * x).cos()), 1);
        for (j, z) in c.coeffs().iter().enumerate() {
            let k = g.mode_index(j);
            let expected = match k {
                0 => 0.25,
                6 | -6 => 0.125,
                _ => 0.0,
            };
            assert!((z.norm() - expected).abs() < 1e-14, "k = {k}");
        }
    }

    #[test]
    fn dealiasing_truncates_high_modes() {
        let g = make_grid(PI, 30).unwrap();
        let f = SpectralField::from_fn(&g, |x| (4.0 * x).cos());
        let plain = nonlinearity(&f, 2);
        let cut = nonlinearity_with(&f, 2, true);
        assert!(plain.coeffs()[g.slot(12)].norm() > 1e-3);
        assert!(cut.coeffs()[g.slot(12)].norm() < 1e-15);
        assert_relative_eq!(cut.coeffs()[g.slot(4)].re, plain.coeffs()[g.slot(4)].re);
    }

    #[test]
    fn second_derivative_composition() {
        let l = 6.0;
        let g = make_grid(l, 128).unwrap();
        let f = SpectralField::from_fn(&g, |x| (-x * x).exp() * (1.0 + 0.3 * x));
        let minus_k2 = MultiplierSymbol::from_fn(&g, |k| -k * k);
        let a = apply_multiplier(&minus_k2, &f).unwrap();
        let b = differentiate(&differentiate(&f, 1), 1);
        let scale = a.max_abs();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-11 * scale);
        }
    }

    #[test]
    fn translation_by_whole_nodes() {
        let g = make_grid(8.0, 64).unwrap();
        let f = SpectralField::from_fn(&g, |x| (-x * x).exp());
        let t = f.translated(3.0 * g.step());
        for j in 0..64 {
            assert!((t.values()[(j + 3) % 64] - f.values()[j]).abs() < 1e-13);
        }
    }

    #[test]
    fn params_validation() {
        assert!(EquationParams::new(1.0, 1, 2, 1.0, 1.0).is_err());
        assert!(EquationParams::new(0.5, 1, 0, 1.0, 1.0).is_err());
        assert!(EquationParams::new(0.5, 1, 2, -1.0, 1.0).is_err());
        assert!(EquationParams::new(0.5, 1, 2, 1.0, 0.0).is_err());
        assert!(EquationParams::gbenjamin(2, 1.0).with_speed(-1.0).validate().is_err());
        assert!(EquationParams::gbenjamin(2, 1.0).c_s().is_err());
    }
}
