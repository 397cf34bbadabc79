//! Diagnostics: discrete invariants, pulse tracking, envelopes and curve
//! fits, amplitude-speed studies and the linear dispersion relations.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solitary::{check_admissible, DomainOptions, PetviashviliConfig, ProfileEquation};
use crate::spectral::{abs_pow, differentiate, EquationParams, SpectralField};

/// Samples in the sliding window of the speed estimator.
pub const SPEED_WINDOW: usize = 16;

/// `I_h = h sum U_j^2`.
pub fn invariant_momentum(u: &SpectralField) -> f64 {
    u.grid().step() * u.values().iter().map(|v| v * v).sum::<f64>()
}

/// `C_h = h sum U_j`.
pub fn invariant_mass(u: &SpectralField) -> f64 {
    u.grid().step() * u.values().iter().sum::<f64>()
}

/// `E_h = h sum [delta (D^m U)^2 - gamma U H^{2r} U - 2 U^{q+2}/((q+1)(q+2))]`
/// where `H` multiplies mode `k` by `|kappa_k|`. The quadratic part is
/// evaluated through the coefficients.
pub fn invariant_energy(u: &SpectralField, p: &EquationParams) -> f64 {
    let g = u.grid();
    let quad: f64 = u
        .coeffs()
        .iter()
        .zip(g.wavenumbers())
        .map(|(z, k)| {
            let a = k.abs();
            (p.delta * abs_pow(a, 2.0 * p.m as f64) - p.gamma * abs_pow(a, 2.0 * p.r)) * z.norm_sqr()
        })
        .sum();
    let q = p.q as f64;
    let pot: f64 = u.values().iter().map(|v| v.powi(p.q as i32 + 2)).sum();
    2.0 * g.half_length() * quad - g.step() * 2.0 * pot / ((q + 1.0) * (q + 2.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrackMode {
    /// Largest value (elevation waves).
    #[default]
    Max,
    /// Smallest value (depression waves).
    Min,
    AbsMax,
}

/// How the grid extremum is refined to a sub-grid position.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeakRefinement {
    /// Parabola through the extremum and its two neighbours.
    #[default]
    Quadratic,
    /// Newton iteration on the derivative of the trigonometric interpolant,
    /// started from the quadratic estimate.
    Spectral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub t: f64,
    pub amplitude: f64,
    /// Unwrapped across the periodic boundary.
    pub position: f64,
    pub speed_estimate: Option<f64>,
}

pub fn track_pulse(u: &SpectralField, prev: Option<&PulseRecord>) -> Result<PulseRecord> {
    track_pulse_mode(u, prev, TrackMode::Max)
}

/// Grid extremum refined by the parabola through it and its two neighbours.
pub fn track_pulse_mode(u: &SpectralField, prev: Option<&PulseRecord>, mode: TrackMode) -> Result<PulseRecord> {
    track_pulse_with(u, prev, mode, PeakRefinement::Quadratic)
}

pub fn track_pulse_with(
    u: &SpectralField,
    prev: Option<&PulseRecord>,
    mode: TrackMode,
    refinement: PeakRefinement,
) -> Result<PulseRecord> {
    let v = u.values();
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !(hi - lo >= 1e-14) {
        return Err(Error::NoPulse);
    }
    let sign = match mode {
        TrackMode::Max => 1.0,
        TrackMode::Min => -1.0,
        TrackMode::AbsMax => {
            if hi.abs() >= lo.abs() {
                1.0
            } else {
                -1.0
            }
        }
    };
    let j = argmax(v.iter().map(|x| sign * x));
    let (delta, mut peak) = refine(u, j, sign);
    let g = u.grid();
    let mut position = g.wrap(g.node(j) + delta * g.step());
    if refinement == PeakRefinement::Spectral {
        if let Some((x, val)) = spectral_extremum(u, position) {
            position = g.wrap(x);
            peak = sign * val;
        }
    }
    if let Some(p) = prev {
        let period = 2.0 * g.half_length();
        position += period * ((p.position - position) / period).round();
    }
    Ok(PulseRecord {
        t: 0.0,
        amplitude: sign * peak,
        position,
        speed_estimate: None,
    })
}

fn argmax(it: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, x) in it.enumerate() {
        if x > best.1 {
            best = (j, x);
        }
    }
    best.0
}

/// Offset (in steps) and value of the vertex of the parabola through
/// `sign * u` at `j - 1, j, j + 1`.
fn refine(u: &SpectralField, j: usize, sign: f64) -> (f64, f64) {
    let v = u.values();
    let n = v.len();
    let fm = sign * v[(j + n - 1) % n];
    let f0 = sign * v[j];
    let fp = sign * v[(j + 1) % n];
    let curv = fm - 2.0 * f0 + fp;
    if curv >= 0.0 {
        return (0.0, f0);
    }
    let d = 0.5 * (fm - fp) / curv;
    (d, f0 - 0.25 * (fm - fp) * d)
}

/// Trigonometric interpolant of `u` and its first two derivatives at `x`.
pub fn interpolate(u: &SpectralField, x: f64) -> (f64, f64, f64) {
    let g = u.grid();
    let s = x + g.half_length();
    let (mut f, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for (c, &k) in u.coeffs().iter().zip(g.wavenumbers()) {
        let e = num_complex::Complex64::from_polar(1.0, k * s);
        let z = c * e;
        f += z.re;
        d1 -= k * z.im;
        d2 -= k * k * z.re;
    }
    (f, d1, d2)
}

/// Shift `s` for which `reference(x - s)` best matches `u` in the discrete
/// L2 norm, found by Newton's method on the cross-correlation from `guess`.
/// `None` when the grids differ or the iteration does not settle.
pub fn fit_shift(u: &SpectralField, reference: &SpectralField, guess: f64) -> Option<f64> {
    if u.grid() != reference.grid() {
        return None;
    }
    let g = u.grid();
    let prods: Vec<(f64, num_complex::Complex64)> = u
        .coeffs()
        .iter()
        .zip(reference.coeffs())
        .zip(g.wavenumbers())
        .map(|((a, b), &k)| (k, a.conj() * b))
        .collect();
    let mut s = guess;
    for _ in 0..50 {
        let (mut d1, mut d2) = (0.0, 0.0);
        for &(k, z) in &prods {
            let w = z * num_complex::Complex64::from_polar(1.0, -k * s);
            d1 += k * w.im;
            d2 -= k * k * w.re;
        }
        if d2 >= 0.0 {
            return None;
        }
        let ds = d1 / d2;
        s -= ds;
        if ds.abs() <= 1e-15 * g.step().max(s.abs()) {
            return Some(s);
        }
    }
    None
}

/// Critical point of the interpolant near `x0` by Newton's method; `None`
/// when the iteration leaves the neighbouring cells.
fn spectral_extremum(u: &SpectralField, x0: f64) -> Option<(f64, f64)> {
    let h = u.grid().step();
    let mut x = x0;
    for _ in 0..30 {
        let (_, d1, d2) = interpolate(u, x);
        if d2 == 0.0 {
            return None;
        }
        let dx = d1 / d2;
        x -= dx;
        if (x - x0).abs() > 2.0 * h {
            return None;
        }
        if dx.abs() <= 1e-15 * h.max(x.abs()) {
            break;
        }
    }
    Some((x, interpolate(u, x).0))
}

/// Refined local maxima of `u` above `threshold`, by decreasing amplitude.
pub fn find_pulses(u: &SpectralField, threshold: f64) -> Vec<(f64, f64)> {
    let v = u.values();
    let n = v.len();
    let g = u.grid();
    let mut out: Vec<(f64, f64)> = (0..n)
        .filter(|&j| v[j] > threshold && v[j] >= v[(j + n - 1) % n] && v[j] > v[(j + 1) % n])
        .map(|j| {
            let (d, peak) = refine(u, j, 1.0);
            (g.wrap(g.node(j) + d * g.step()), peak)
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out
}

/// Least-squares slope of `(t, x)` points; `None` for fewer than two
/// distinct times.
pub fn slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let xm = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    if stt == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - tm) * (p.1 - xm)).sum::<f64>() / stt)
}

/// Sliding-window speed and phase error `x(t) - (x(0) + c_s t)`. Both series
/// are empty with fewer than `window` records.
pub fn speed_and_phase(records: &[PulseRecord], c_s: f64, window: usize) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    if records.len() < window || window < 2 {
        return (Vec::new(), Vec::new());
    }
    let speed = records
        .windows(window)
        .filter_map(|w| {
            let pts: Vec<(f64, f64)> = w.iter().map(|r| (r.t, r.position)).collect();
            slope(&pts).map(|s| (w[window - 1].t, s))
        })
        .collect();
    let x0 = records[0].position;
    let t0 = records[0].t;
    let phase = records.iter().map(|r| (r.t, r.position - (x0 + c_s * (r.t - t0)))).collect();
    (speed, phase)
}

/// Mean of the values with `t >= t_min`.
pub fn late_time_mean(series: &[(f64, f64)], t_min: f64) -> Option<f64> {
    let late: Vec<f64> = series.iter().filter(|p| p.0 >= t_min).map(|p| p.1).collect();
    if late.is_empty() {
        None
    } else {
        Some(late.iter().sum::<f64>() / late.len() as f64)
    }
}

/// Local maxima of `|phi_j|` at nodes `x_j >= x_min`.
pub fn envelope_extract(phi: &SpectralField, x_min: f64) -> Result<Vec<(f64, f64)>> {
    let g = phi.grid();
    let a: Vec<f64> = phi.values().iter().map(|v| v.abs()).collect();
    let n = a.len();
    let out: Vec<(f64, f64)> = (1..n - 1)
        .filter(|&j| g.node(j) >= x_min && a[j] > 0.0 && a[j] >= a[j - 1] && a[j] > a[j + 1])
        .map(|j| (g.node(j), a[j]))
        .collect();
    if out.len() < 4 {
        return Err(Error::InsufficientEnvelope { found: out.len() });
    }
    Ok(out)
}

/// Upper envelope of `|phi|` at every node `x_j >= x_min`: linear
/// interpolation between consecutive local maxima, `|phi_j|` outside them.
pub fn envelope_curve(phi: &SpectralField, x_min: f64) -> Result<Vec<(f64, f64)>> {
    let peaks = envelope_extract(phi, x_min)?;
    let g = phi.grid();
    let mut k = 0;
    Ok((0..g.len())
        .filter(|&j| g.node(j) >= x_min)
        .map(|j| {
            let x = g.node(j);
            let a = phi.values()[j].abs();
            while k + 1 < peaks.len() && peaks[k + 1].0 <= x {
                k += 1;
            }
            if x < peaks[0].0 || k + 1 >= peaks.len() {
                return (x, a);
            }
            let (x0, y0) = peaks[k];
            let (x1, y1) = peaks[k + 1];
            (x, a.max(y0 + (y1 - y0) * (x - x0) / (x1 - x0)))
        })
        .collect())
}

/// Three decay lengths past the peak of `phi`.
pub fn default_envelope_start(phi: &SpectralField, decay_length: f64) -> f64 {
    let j = argmax(phi.values().iter().map(|v| v.abs()));
    phi.grid().node(j) + 3.0 * decay_length
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "degree", rename_all = "kebab-case")]
pub enum FitModel {
    /// `K x^alpha`, coefficients `[K, alpha]`.
    Power,
    /// `a e^{b x}`, coefficients `[a, b]`.
    Exp1,
    /// `a e^{b x} + c e^{d x}`, coefficients `[a, b, c, d]`.
    Exp2,
    /// `p1 / (x^n + q1 x^{n-1} + ... + qn)`, coefficients `[p1, q1, ..., qn]`.
    Rational(u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    pub coefficients: Vec<f64>,
    pub sse: f64,
    pub r_squared: f64,
    pub n_points: usize,
    /// False when the Gauss-Newton refinement hit its iteration cap.
    pub converged: bool,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl FitResult {
    pub fn eval(&self, x: f64) -> f64 {
        eval_model(self.model, &self.coefficients, x)
    }

    fn build(model: FitModel, coefficients: Vec<f64>, xs: &[f64], ys: &[f64], converged: bool) -> Result<Self> {
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::RankDeficientFit(format!("non-finite coefficients {coefficients:?}")));
        }
        let residuals: Vec<f64> = xs.iter().zip(ys).map(|(&x, &y)| y - eval_model(model, &coefficients, x)).collect();
        let sse: f64 = residuals.iter().map(|r| r * r).sum();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let sst: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
        let r_squared = if sst > 0.0 { 1.0 - sse / sst } else if sse == 0.0 { 1.0 } else { f64::NEG_INFINITY };
        Ok(FitResult {
            model,
            coefficients,
            sse,
            r_squared,
            n_points: xs.len(),
            converged,
            residuals,
        })
    }
}

fn eval_model(model: FitModel, c: &[f64], x: f64) -> f64 {
    match model {
        FitModel::Power => c[0] * x.powf(c[1]),
        FitModel::Exp1 => c[0] * (c[1] * x).exp(),
        FitModel::Exp2 => c[0] * (c[1] * x).exp() + c[2] * (c[3] * x).exp(),
        FitModel::Rational(_) => {
            let den = c[1..].iter().fold(1.0, |acc, q| acc * x + q);
            c[0] / den
        }
    }
}

/// Linear least squares by SVD with column equilibration.
fn lstsq(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    let ncols = a.ncols();
    if a.nrows() < ncols {
        return Err(Error::RankDeficientFit(format!("{} equations for {} unknowns", a.nrows(), ncols)));
    }
    let scales: Vec<f64> = (0..ncols).map(|j| a.column(j).norm()).collect();
    if scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::RankDeficientFit("zero or non-finite column".into()));
    }
    let mut a = a;
    for (j, s) in scales.iter().enumerate() {
        a.column_mut(j).unscale_mut(*s);
    }
    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if !(smin > 1e-12 * smax) {
        return Err(Error::RankDeficientFit(format!("condition number {:.3e}", smax / smin)));
    }
    let x = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::RankDeficientFit(e.to_string()))?;
    Ok(DVector::from_iterator(ncols, x.iter().zip(&scales).map(|(v, s)| v / s)))
}

fn check_points(xs: &[f64], ys: &[f64], params: usize) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("xs and ys differ in length"));
    }
    if xs.len() < params + 1 {
        return Err(Error::invalid(format!("need at least {} points, got {}", params + 1, xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite data"));
    }
    Ok(())
}

/// `y = K x^alpha` fitted to `ln y = ln K + alpha ln x`.
pub fn fit_power(xs: &[f64], ys: &[f64]) -> Result<FitResult> {
    check_points(xs, ys, 2)?;
    if xs.iter().chain(ys).any(|&v| v <= 0.0) {
        return Err(Error::invalid("power fit needs positive data"));
    }
    let n = xs.len();
    let a = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { xs[i].ln() });
    let b = DVector::from_iterator(n, ys.iter().map(|y| y.ln()));
    let c = lstsq(a, b)?;
    FitResult::build(FitModel::Power, vec![c[0].exp(), c[1]], xs, ys, true)
}

/// One or two exponential terms.
pub fn fit_exp(xs: &[f64], ys: &[f64], terms: u32) -> Result<FitResult> {
    match terms {
        1 => fit_exp1(xs, ys),
        2 => fit_exp2(xs, ys),
        _ => Err(Error::invalid(format!("{terms} exponential terms; expected 1 or 2"))),
    }
}

fn fit_exp1(xs: &[f64], ys: &[f64]) -> Result<FitResult> {
    check_points(xs, ys, 2)?;
    if ys.iter().any(|&v| v <= 0.0) {
        return Err(Error::invalid("exponential fit needs positive ys"));
    }
    let n = xs.len();
    let a = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
    let b = DVector::from_iterator(n, ys.iter().map(|y| y.ln()));
    let c = lstsq(a, b)?;
    FitResult::build(FitModel::Exp1, vec![c[0].exp(), c[1]], xs, ys, true)
}

const GN_MAX_ITERS: usize = 200;

fn sse_of(model: FitModel, c: &[f64], xs: &[f64], ys: &[f64]) -> f64 {
    xs.iter().zip(ys).map(|(&x, &y)| (y - eval_model(model, c, x)).powi(2)).sum()
}

/// Damped Gauss-Newton on `a e^{bx} + c e^{dx}`, started from single
/// exponentials fitted to the whole data and to its tail half.
fn fit_exp2(xs: &[f64], ys: &[f64]) -> Result<FitResult> {
    check_points(xs, ys, 4)?;
    let full = fit_exp1(xs, ys)?;
    let half = xs.len() / 2;
    let tail = fit_exp1(&xs[half..], &ys[half..]).unwrap_or_else(|_| full.clone());
    let head = fit_exp1(&xs[..half.max(3)], &ys[..half.max(3)]).unwrap_or_else(|_| full.clone());
    let starts = [
        [full.coefficients[0], full.coefficients[1], tail.coefficients[0], tail.coefficients[1]],
        [head.coefficients[0], head.coefficients[1], tail.coefficients[0], tail.coefficients[1]],
        [
            0.5 * full.coefficients[0],
            1.5 * full.coefficients[1],
            0.5 * full.coefficients[0],
            0.5 * full.coefficients[1],
        ],
    ];
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for s in starts {
        let (c, sse, conv) = gauss_newton_exp2(xs, ys, s.to_vec());
        if sse.is_finite() && best.as_ref().is_none_or(|b| sse < b.1) {
            best = Some((c, sse, conv));
        }
    }
    let (c, _, conv) = best.ok_or_else(|| Error::RankDeficientFit("no finite exp2 fit".into()))?;
    if !conv {
        log::warn!("exp2 fit stopped at the iteration cap");
    }
    FitResult::build(FitModel::Exp2, c, xs, ys, conv)
}

fn gauss_newton_exp2(xs: &[f64], ys: &[f64], c: Vec<f64>) -> (Vec<f64>, f64, bool) {
    let jac = |c: &[f64], x: f64, j: usize| match j {
        0 => (c[1] * x).exp(),
        1 => c[0] * x * (c[1] * x).exp(),
        2 => (c[3] * x).exp(),
        _ => c[2] * x * (c[3] * x).exp(),
    };
    damped_gauss_newton(FitModel::Exp2, xs, ys, c, jac, |_| true)
}

/// Gauss-Newton with step halving. `admissible` rejects trial points.
fn damped_gauss_newton(
    model: FitModel,
    xs: &[f64],
    ys: &[f64],
    mut c: Vec<f64>,
    jac: impl Fn(&[f64], f64, usize) -> f64,
    admissible: impl Fn(&[f64]) -> bool,
) -> (Vec<f64>, f64, bool) {
    let n = xs.len();
    let k = c.len();
    let mut sse = sse_of(model, &c, xs, ys);
    for _ in 0..GN_MAX_ITERS {
        let jm = DMatrix::from_fn(n, k, |i, j| jac(&c, xs[i], j));
        let r = DVector::from_iterator(n, xs.iter().zip(ys).map(|(&x, &y)| y - eval_model(model, &c, x)));
        let step = match lstsq(jm, r) {
            Ok(s) => s,
            Err(_) => return (c, sse, false),
        };
        let mut lambda = 1.0;
        let mut improved = false;
        while lambda > 1e-10 {
            let trial: Vec<f64> = c.iter().zip(step.iter()).map(|(a, d)| a + lambda * d).collect();
            let t = sse_of(model, &trial, xs, ys);
            if t.is_finite() && t < sse && admissible(&trial) {
                let rel = (sse - t) / sse.max(f64::MIN_POSITIVE);
                c = trial;
                sse = t;
                improved = true;
                if rel < 1e-14 {
                    return (c, sse, true);
                }
                break;
            }
            lambda *= 0.5;
        }
        if !improved {
            return (c, sse, true);
        }
    }
    (c, sse, false)
}

fn denominator(c: &[f64], x: f64) -> f64 {
    c[1..].iter().fold(1.0, |acc, q| acc * x + q)
}

/// True when the denominator keeps one sign on `[min xs, max xs]`, checked
/// at the data and at 8 points inside each gap.
fn pole_free(c: &[f64], xs: &[f64]) -> bool {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let s0 = denominator(c, sorted[0]).signum();
    if s0 == 0.0 {
        return false;
    }
    sorted.windows(2).all(|w| (0..=8).all(|i| denominator(c, w[0] + (w[1] - w[0]) * i as f64 / 8.0) * s0 > 0.0))
}

/// `p1 / (x^n + q1 x^{n-1} + ... + qn)`. The linearization
/// `p1 - sum_i q_i y x^{n-i} = y x^n` gives a start that is refined by
/// damped Gauss-Newton, keeping the denominator free of zeros on the data.
pub fn fit_rational(xs: &[f64], ys: &[f64], denom_degree: u32) -> Result<FitResult> {
    let deg = denom_degree as usize;
    if deg == 0 {
        return Err(Error::invalid("denominator degree must be at least 1"));
    }
    check_points(xs, ys, deg + 1)?;
    let n = xs.len();
    let a = DMatrix::from_fn(n, deg + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            -ys[i] * xs[i].powi((deg - j) as i32)
        }
    });
    let b = DVector::from_iterator(n, xs.iter().zip(ys).map(|(x, y)| y * x.powi(deg as i32)));
    let linear: Vec<f64> = lstsq(a, b)?.iter().copied().collect();

    // Refinement in the original space, from the linearized solution and
    // from a bell `y0 w^n / ((x - x0)^n + w^n)` at the first data point.
    let model = FitModel::Rational(denom_degree);
    let mut starts = vec![linear.clone()];
    let (x0, y0) = (xs[0], ys[0]);
    if let Some(j) = ys.iter().position(|&y| y.abs() <= 0.5 * y0.abs()) {
        let w = (xs[j] - x0).abs();
        if w > 0.0 {
            let mut c = vec![y0 * w.powi(deg as i32)];
            for i in 1..=deg {
                c.push(binomial(deg, i) * (-x0).powi(i as i32));
            }
            c[deg] += w.powi(deg as i32);
            starts.push(c);
        }
    }
    let jac = |c: &[f64], x: f64, j: usize| {
        let d = denominator(c, x);
        if j == 0 {
            1.0 / d
        } else {
            -c[0] * x.powi((deg - j) as i32) / (d * d)
        }
    };
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for s in starts {
        if !pole_free(&s, xs) {
            continue;
        }
        let (c, sse, conv) = damped_gauss_newton(model, xs, ys, s, jac, |c| pole_free(c, xs));
        if sse.is_finite() && best.as_ref().is_none_or(|b| sse < b.1) {
            best = Some((c, sse, conv));
        }
    }
    match best {
        Some((c, _, conv)) => FitResult::build(model, c, xs, ys, conv),
        None => {
            log::warn!("rational fit has a pole inside the data range");
            FitResult::build(model, linear, xs, ys, false)
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Closed-form gKdV amplitude `(c (q+1)(q+2)/2)^{1/q}`.
pub fn gkdv_amplitude(q: u32, c_s: f64) -> f64 {
    let qf = q as f64;
    (c_s * (qf + 1.0) * (qf + 2.0) / 2.0).powf(1.0 / qf)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub c_s: f64,
    pub amplitude: Option<f64>,
    pub iterations: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeSpeedStudy {
    pub rows: Vec<StudyRow>,
    pub fit: Option<FitResult>,
    /// gKdV exponent `1/q` for overlays.
    pub reference_exponent: f64,
}

impl AmplitudeSpeedStudy {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("# benjamin amplitude-speed v1\nc_s,amplitude,iterations,error\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{}\n",
                crate::evolve::fmt_f(r.c_s),
                r.amplitude.map(crate::evolve::fmt_f).unwrap_or_default(),
                r.iterations,
                r.error.as_deref().unwrap_or("")
            ));
        }
        s
    }
}

/// `c_0, c_0 + stride, ...` up to and including `c_1` (within round-off).
pub fn speed_range(c0: f64, c1: f64, stride: f64) -> Vec<f64> {
    let count = ((c1 - c0) / stride + 1e-9).floor() as usize;
    (0..=count).map(|i| c0 + i as f64 * stride).collect()
}

/// One profile per speed (in parallel) and a power fit of amplitude
/// against speed over the successful rows.
pub fn amplitude_speed_study(
    template: &EquationParams,
    speeds: &[f64],
    domain: &DomainOptions,
    cfg: &PetviashviliConfig,
) -> Result<AmplitudeSpeedStudy> {
    for &c in speeds {
        check_admissible(&template.with_speed(c))?;
    }
    let rows: Vec<StudyRow> = speeds
        .par_iter()
        .map(|&c| {
            let p = template.with_speed(c);
            match crate::solitary::generate_profile(|g| ProfileEquation::new(&p, g), &[0.0], domain, cfg) {
                Ok(prof) if prof.converged => StudyRow {
                    c_s: c,
                    amplitude: Some(prof.amplitude()),
                    iterations: prof.iterations,
                    error: None,
                },
                Ok(prof) => StudyRow {
                    c_s: c,
                    amplitude: None,
                    iterations: prof.iterations,
                    error: Some(format!("no convergence (residual {:e})", prof.final_metric)),
                },
                Err(e) => StudyRow {
                    c_s: c,
                    amplitude: None,
                    iterations: 0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let ok: Vec<&StudyRow> = rows.iter().filter(|r| r.amplitude.is_some()).collect();
    if ok.len() < rows.len() {
        log::warn!("{} of {} speeds excluded from the fit", rows.len() - ok.len(), rows.len());
    }
    let xs: Vec<f64> = ok.iter().map(|r| r.c_s).collect();
    let ys: Vec<f64> = ok.iter().filter_map(|r| r.amplitude).collect();
    let fit = fit_power(&xs, &ys).ok();
    Ok(AmplitudeSpeedStudy {
        rows,
        fit,
        reference_exponent: 1.0 / template.q as f64,
    })
}

/// `phi(x) = gamma x^r - delta x^m`.
pub fn phi_symbol(x: f64, p: &EquationParams) -> f64 {
    p.gamma * abs_pow(x, p.r) - p.delta * abs_pow(x, p.m as f64)
}

/// `psi(x) = (2r+1) gamma x^r - (2m+1) delta x^m`.
pub fn psi_symbol(x: f64, p: &EquationParams) -> f64 {
    (2.0 * p.r + 1.0) * p.gamma * abs_pow(x, p.r) - (2.0 * p.m as f64 + 1.0) * p.delta * abs_pow(x, p.m as f64)
}

/// Local phase speed `-c_s + phi(kappa^2)`.
pub fn phase_speed(kappa: f64, p: &EquationParams) -> Result<f64> {
    Ok(-p.c_s()? + phi_symbol(kappa * kappa, p))
}

/// Group velocity `-c_s + psi(kappa^2)`.
pub fn group_velocity(kappa: f64, p: &EquationParams) -> Result<f64> {
    Ok(-p.c_s()? + psi_symbol(kappa * kappa, p))
}

/// `F(x) = psi(x) - c_s`; its positive zeros are the squared wavenumbers
/// of radiation moving with the pulse.
pub fn radiation_function(x: f64, p: &EquationParams) -> Result<f64> {
    Ok(psi_symbol(x, p) - p.c_s()?)
}

/// `gamma_* = [c_s / ((2r+1)(1 - r/m) (r(2r+1)/(m(2m+1)delta))^{r/(m-r)})]^{(m-r)/m}`.
pub fn gamma_star(p: &EquationParams) -> Result<f64> {
    let c = p.c_s()?;
    let r = p.r;
    let m = p.m as f64;
    if !(r > 0.0 && r < m) {
        return Err(Error::invalid(format!("gamma_* needs 0 < r < m, got r = {r}")));
    }
    let inner = (r * (2.0 * r + 1.0) / (m * (2.0 * m + 1.0) * p.delta)).powf(r / (m - r));
    Ok((c / ((2.0 * r + 1.0) * (1.0 - r / m) * inner)).powf((m - r) / m))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DispersionRegime {
    /// `gamma_* < gamma < gamma_max`: `F` has two positive zeros.
    TwoRoots,
    /// `gamma <= gamma_*`: `F < 0` for `x > 0`.
    NoForwardRadiation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionReport {
    pub params: EquationParams,
    pub gamma_max: f64,
    pub gamma_star: f64,
    pub regime: DispersionRegime,
    /// `(x_-, x_+)` when the regime has roots.
    pub roots: Option<(f64, f64)>,
    /// Zero of `psi`: `((2r+1) gamma / ((2m+1) delta))^{1/(m-r)}`.
    pub x_c: f64,
    /// Maximizer of `phi`: `(r gamma / (m delta))^{1/(m-r)}`.
    pub x_p: f64,
    /// Maximizer of `psi`.
    pub x_star_psi: f64,
    /// `max_x phi(x) - c_s`; negative below `gamma_max`.
    pub max_phase_speed: f64,
    /// `F(x_star_psi)`, the largest group velocity.
    pub max_group_velocity: f64,
    /// `gamma^2 - 3 delta c_s`, for the case `r = 1/2, m = 1`.
    pub discriminant: Option<f64>,
}

fn is_gbenjamin(p: &EquationParams) -> bool {
    p.r == 0.5 && p.m == 1
}

pub fn classify_dispersion(p: &EquationParams) -> Result<DispersionReport> {
    let gm = check_admissible(p)?;
    let gs = gamma_star(p)?;
    let c = p.c_s()?;
    let (r, m, g, d) = (p.r, p.m as f64, p.gamma, p.delta);
    let e = 1.0 / (m - r);
    let x_c = ((2.0 * r + 1.0) * g / ((2.0 * m + 1.0) * d)).powf(e);
    let x_p = (r * g / (m * d)).powf(e);
    let x_star_psi = (r * (2.0 * r + 1.0) * g / (m * (2.0 * m + 1.0) * d)).powf(e);
    let max_group_velocity = radiation_function(x_star_psi, p)?;

    let (regime, roots, discriminant) = if is_gbenjamin(p) {
        let disc = g * g - 3.0 * d * c;
        if disc > 0.0 {
            let b = (6.0 * d * c - 4.0 * g * g) / (9.0 * d * d);
            let s = 4.0 * g * disc.sqrt() / (9.0 * d * d);
            (DispersionRegime::TwoRoots, Some((0.5 * (-b - s), 0.5 * (-b + s))), Some(disc))
        } else {
            (DispersionRegime::NoForwardRadiation, None, Some(disc))
        }
    } else if g > gs {
        let mut big = 2.0 * x_star_psi.max(1.0);
        while radiation_function(big, p)? >= 0.0 {
            big *= 2.0;
        }
        let lo = bisect(|x| radiation_function(x, p).unwrap_or(f64::NAN), 0.0, x_star_psi)?;
        let hi = bisect(|x| radiation_function(x, p).unwrap_or(f64::NAN), x_star_psi, big)?;
        (DispersionRegime::TwoRoots, Some((lo, hi)), None)
    } else {
        (DispersionRegime::NoForwardRadiation, None, None)
    };

    if let Some((a, b)) = roots {
        let scale = c.max(1.0);
        for x in [a, b] {
            let f = radiation_function(x, p)?;
            if !(f.abs() <= 1e-10 * scale) {
                return Err(Error::Internal(format!("root {x} leaves F = {f:e}")));
            }
        }
        if !(a < b) {
            return Err(Error::Internal(format!("roots out of order: {a} >= {b}")));
        }
    }

    Ok(DispersionReport {
        params: *p,
        gamma_max: gm,
        gamma_star: gs,
        regime,
        roots,
        x_c,
        x_p,
        x_star_psi,
        max_phase_speed: phi_symbol(x_p, p) - c,
        max_group_velocity,
        discriminant,
    })
}

/// Sign-change root of `f` on `[a, b]`.
fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> Result<f64> {
    let mut fa = f(a);
    let fb = f(b);
    if !(fa * fb <= 0.0) {
        return Err(Error::Internal(format!("no sign change on [{a}, {b}]: {fa:e}, {fb:e}")));
    }
    for _ in 0..400 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// `(phi_j, phi'_j)` pairs with a spectral derivative.
pub fn phase_plot_data(phi: &SpectralField) -> Vec<(f64, f64)> {
    let d = differentiate(phi, 1);
    phi.values().iter().copied().zip(d.values().iter().copied()).collect()
}

/// Largest distance from the origin of the first and last phase-plot points.
pub fn phase_loop_gap(data: &[(f64, f64)]) -> f64 {
    [data.first(), data.last()]
        .iter()
        .flatten()
        .map(|(a, b)| a.hypot(*b))
        .fold(0.0, f64::max)
}
