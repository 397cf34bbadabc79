//! Time integration of the periodic problem in Fourier coefficients,
//!
//! ```text
//! d u_k/dt = i kappa_k sigma_L(kappa_k) u_k - i kappa_k F(u)_k,
//! ```
//!
//! with the fourth-order symmetric composition of three implicit midpoint
//! substeps of lengths `b1 dt`, `b2 dt`, `b3 dt`.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, PeakRefinement, PulseRecord, TrackMode};
use crate::error::{Error, Result};
use crate::spectral::{EquationParams, PeriodicGrid, SpectralField};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// `(b1, b2, b3)` with `b1 = b3 = 1/(2 - 2^{1/3})`, `b2 = 1 - 2 b1`.
pub fn yoshida_coefficients() -> [f64; 3] {
    let b1 = 1.0 / (2.0 - 2f64.cbrt());
    [b1, 1.0 - 2.0 * b1, b1]
}

fn default_coefficients() -> [f64; 3] {
    yoshida_coefficients()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepperConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Relative increment that ends a stage solve.
    pub stage_tol: f64,
    pub stage_max_sweeps: usize,
    /// Rescale the mean-free part after every step to the initial `I_h`.
    pub projection: bool,
    /// Steps between recorded samples.
    pub sample_every: usize,
    /// Keep a full snapshot every this many samples; 0 keeps only the first
    /// and last.
    pub snapshot_every: usize,
    #[serde(default = "default_coefficients")]
    pub coefficients: [f64; 3],
    /// Truncate the nonlinear term with the 2/3 rule.
    pub dealias: bool,
    pub track: TrackMode,
    pub peak_refinement: PeakRefinement,
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig {
            dt: 1.5625e-3,
            t_end: 100.0,
            stage_tol: 1e-13,
            stage_max_sweeps: 100,
            projection: false,
            sample_every: 64,
            snapshot_every: 0,
            coefficients: yoshida_coefficients(),
            dealias: false,
            track: TrackMode::Max,
            peak_refinement: PeakRefinement::Quadratic,
        }
    }
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt != 0.0) {
            return Err(Error::invalid(format!("dt = {} must be finite and non-zero", self.dt)));
        }
        if !self.t_end.is_finite() || self.t_end * self.dt < 0.0 {
            return Err(Error::invalid("t_end must have the sign of dt"));
        }
        if !(self.stage_tol > 0.0) || self.stage_max_sweeps == 0 {
            return Err(Error::invalid("stage tolerance and sweep cap must be positive"));
        }
        if self.sample_every == 0 {
            return Err(Error::invalid("sample_every must be at least 1"));
        }
        let sum: f64 = self.coefficients.iter().sum();
        if (sum - 1.0).abs() > 1e-14 {
            return Err(Error::invalid(format!("composition weights sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Number of full steps and the length of a shortened final step, if any.
    pub fn schedule(&self) -> (usize, Option<f64>) {
        let ratio = self.t_end / self.dt;
        let whole = ratio.round();
        if (ratio - whole).abs() <= 1e-9 * whole.max(1.0) {
            (whole as usize, None)
        } else {
            let full = ratio.floor();
            (full as usize, Some(self.t_end - full * self.dt))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub substeps: usize,
    pub total_sweeps: usize,
    pub max_sweeps: usize,
}

impl StageStats {
    pub fn mean_sweeps(&self) -> f64 {
        if self.substeps == 0 {
            0.0
        } else {
            self.total_sweeps as f64 / self.substeps as f64
        }
    }
}

/// Semidiscrete operator and workspaces for one run.
pub struct Stepper {
    grid: PeriodicGrid,
    params: EquationParams,
    /// `i kappa sigma_L`, Nyquist zeroed.
    lambda: Vec<Complex64>,
    /// `-i kappa`, Nyquist zeroed.
    flux: Vec<Complex64>,
    cutoff: Option<usize>,
    stage_tol: f64,
    stage_max_sweeps: usize,
    coefficients: [f64; 3],
    stats: StageStats,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Stepper {
    pub fn new(p: &EquationParams, grid: &PeriodicGrid, cfg: &StepperConfig) -> Result<Self> {
        p.validate()?;
        cfg.validate()?;
        let n = grid.len();
        let nyq = grid.nyquist_slot();
        let mut lambda = Vec::with_capacity(n);
        let mut flux = Vec::with_capacity(n);
        for (j, &k) in grid.wavenumbers().iter().enumerate() {
            if j == nyq {
                lambda.push(ZERO);
                flux.push(ZERO);
            } else {
                lambda.push(Complex64::new(0.0, k * p.dispersion_at(k)));
                flux.push(Complex64::new(0.0, -k));
            }
        }
        Ok(Stepper {
            grid: grid.clone(),
            params: *p,
            lambda,
            flux,
            cutoff: cfg.dealias.then_some(n / 3),
            stage_tol: cfg.stage_tol,
            stage_max_sweeps: cfg.stage_max_sweeps,
            coefficients: cfg.coefficients,
            stats: StageStats::default(),
            buf: vec![ZERO; n],
            scratch: vec![ZERO; grid.scratch_len()],
        })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn stats(&self) -> StageStats {
        self.stats
    }

    /// `-i kappa F(v)_k` into `out`.
    fn nonlinear(&mut self, v: &[Complex64], out: &mut [Complex64]) {
        self.buf.copy_from_slice(v);
        self.grid.inverse_with_scratch(&mut self.buf, &mut self.scratch);
        let p = (self.params.q + 1) as i32;
        let inv = 1.0 / (self.params.q + 1) as f64;
        for z in self.buf.iter_mut() {
            *z = Complex64::new(z.re.powi(p) * inv, 0.0);
        }
        self.grid.forward_with_scratch(&mut self.buf, &mut self.scratch);
        if let Some(cut) = self.cutoff {
            for (j, z) in self.buf.iter_mut().enumerate() {
                if self.grid.mode_index(j).unsigned_abs() as usize > cut {
                    *z = ZERO;
                }
            }
        }
        for ((o, f), b) in out.iter_mut().zip(&self.flux).zip(&self.buf) {
            *o = f * b;
        }
    }

    /// Right-hand side in coefficient space.
    pub fn rhs(&mut self, u: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![ZERO; u.len()];
        self.nonlinear(u, &mut out);
        for ((o, l), z) in out.iter_mut().zip(&self.lambda).zip(u) {
            *o += l * z;
        }
        out
    }

    /// Solves `Y = u + tau G((u + Y)/2)` by preconditioned sweeps.
    pub fn midpoint_substep(&mut self, u: &[Complex64], tau: f64) -> Result<Vec<Complex64>> {
        let n = u.len();
        let half = 0.5 * tau;
        // (I + tau/2 Lambda) u and (I - tau/2 Lambda)^{-1}
        let explicit: Vec<Complex64> = u.iter().zip(&self.lambda).map(|(z, l)| z * (1.0 + l * half)).collect();
        let implicit: Vec<Complex64> = self.lambda.iter().map(|l| 1.0 / (1.0 - l * half)).collect();
        let mut w = u.to_vec();
        let mut mid = vec![ZERO; n];
        let mut nl = vec![ZERO; n];
        let mut increments = Vec::new();
        for sweep in 1..=self.stage_max_sweeps {
            for ((m, a), b) in mid.iter_mut().zip(u).zip(&w) {
                *m = 0.5 * (a + b);
            }
            self.nonlinear(&mid, &mut nl);
            let mut diff = 0.0;
            let mut size = 0.0;
            for (((wk, e), d), g) in w.iter_mut().zip(&explicit).zip(&implicit).zip(&nl) {
                let next = d * (e + g * tau);
                diff += (next - *wk).norm_sqr();
                size += next.norm_sqr();
                *wk = next;
            }
            let incr = if size > 0.0 { (diff / size).sqrt() } else { diff.sqrt() };
            increments.push(incr);
            if incr <= self.stage_tol {
                self.stats.substeps += 1;
                self.stats.total_sweeps += sweep;
                self.stats.max_sweeps = self.stats.max_sweeps.max(sweep);
                return Ok(w);
            }
        }
        Err(Error::StageDivergence {
            sweeps: self.stage_max_sweeps,
            increments,
        })
    }

    /// One composition step of length `dt`.
    pub fn yoshida_step(&mut self, u: &[Complex64], dt: f64) -> Result<Vec<Complex64>> {
        let [b1, b2, b3] = self.coefficients;
        let y1 = self.midpoint_substep(u, b1 * dt)?;
        let y2 = self.midpoint_substep(&y1, b2 * dt)?;
        self.midpoint_substep(&y2, b3 * dt)
    }
}

/// Coefficients of a real field on `grid`; used to drop round-off in the
/// imaginary part after an inverse transform.
fn realify(grid: &PeriodicGrid, coeffs: Vec<Complex64>) -> Result<SpectralField> {
    SpectralField::from_coeffs(grid, coeffs)
}

pub fn rhs(u: &SpectralField, p: &EquationParams) -> Result<SpectralField> {
    let cfg = StepperConfig::default();
    let mut s = Stepper::new(p, u.grid(), &cfg)?;
    let g = s.rhs(u.coeffs());
    realify(u.grid(), g)
}

pub fn midpoint_substep(u: &SpectralField, tau: f64, p: &EquationParams, cfg: &StepperConfig) -> Result<SpectralField> {
    let mut s = Stepper::new(p, u.grid(), cfg)?;
    let y = s.midpoint_substep(u.coeffs(), tau)?;
    realify(u.grid(), y)
}

pub fn yoshida_step(u: &SpectralField, dt: f64, p: &EquationParams, cfg: &StepperConfig) -> Result<SpectralField> {
    let mut s = Stepper::new(p, u.grid(), cfg)?;
    let y = s.yoshida_step(u.coeffs(), dt)?;
    let out = realify(u.grid(), y)?;
    if cfg.projection {
        Ok(project(&out, analysis::invariant_momentum(u)))
    } else {
        Ok(out)
    }
}

/// Rescales the non-zero modes of `u` so that `I_h` equals `reference`.
/// The zero mode, and with it `C_h`, is left bit-for-bit unchanged.
fn project(u: &SpectralField, reference: f64) -> SpectralField {
    let g = u.grid();
    let c = u.coeffs();
    let two_l = 2.0 * g.half_length();
    let wave: f64 = two_l * c[1..].iter().map(|z| z.norm_sqr()).sum::<f64>();
    let target = reference - two_l * c[0].norm_sqr();
    if !(wave > 0.0 && target > 0.0) {
        return u.clone();
    }
    let s = (target / wave).sqrt();
    let coeffs = std::iter::once(c[0]).chain(c[1..].iter().map(|z| z * s)).collect();
    SpectralField::from_coeffs(g, coeffs).expect("length matches grid")
}

/// Callback invoked at every recorded sample.
pub trait Observer {
    fn observe(&mut self, t: f64, u: &SpectralField) -> Result<()>;
}

impl<F> Observer for F
where
    F: FnMut(f64, &SpectralField) -> Result<()>,
{
    fn observe(&mut self, t: f64, u: &SpectralField) -> Result<()> {
        self(t, u)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantSample {
    pub t: f64,
    pub momentum: f64,
    pub energy: f64,
    pub mass: f64,
}

#[derive(Clone, Debug)]
pub struct SimulationRecord {
    pub params: EquationParams,
    pub grid: PeriodicGrid,
    pub times: Vec<f64>,
    pub invariants: Vec<InvariantSample>,
    /// `None` where the field had no pulse to track.
    pub pulses: Vec<Option<PulseRecord>>,
    /// `(t, field)` pairs.
    pub snapshots: Vec<(f64, SpectralField)>,
    pub stats: StageStats,
    pub steps: usize,
    /// Length of the shortened final step, when `t_end` is not a multiple of `dt`.
    pub shortened_last_step: Option<f64>,
    pub final_state: SpectralField,
}

impl SimulationRecord {
    pub const CSV_HEADER: &'static str = "t,I_h,E_h,C_h,peak_amplitude,peak_position,est_speed";

    /// One row per sample. Floats carry 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("# benjamin record v1\n");
        s.push_str(Self::CSV_HEADER);
        s.push('\n');
        for (inv, pulse) in self.invariants.iter().zip(&self.pulses) {
            let (a, x, v) = match pulse {
                Some(p) => (fmt_f(p.amplitude), fmt_f(p.position), p.speed_estimate.map(fmt_f).unwrap_or_default()),
                None => Default::default(),
            };
            s.push_str(&format!(
                "{},{},{},{},{a},{x},{v}\n",
                fmt_f(inv.t),
                fmt_f(inv.momentum),
                fmt_f(inv.energy),
                fmt_f(inv.mass)
            ));
        }
        s
    }

    pub fn amplitudes(&self) -> Vec<(f64, f64)> {
        self.pulses.iter().flatten().map(|p| (p.t, p.amplitude)).collect()
    }
}

pub(crate) fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

/// Integration aborted by a stage failure; carries everything recorded so far.
#[derive(Debug)]
pub struct IntegrationFailure {
    pub record: Box<SimulationRecord>,
    pub error: Error,
}

impl fmt::Display for IntegrationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "integration stopped at t = {}: {}", self.record.times.last().copied().unwrap_or(0.0), self.error)
    }
}

impl std::error::Error for IntegrationFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

struct Recorder<'a, 'o, 'r> {
    record: SimulationRecord,
    cfg: &'a StepperConfig,
    observers: &'o mut [&'r mut dyn Observer],
    samples: usize,
}

impl Recorder<'_, '_, '_> {
    fn sample(&mut self, t: f64, u: &SpectralField, last: bool) -> Result<()> {
        let r = &mut self.record;
        r.times.push(t);
        r.invariants.push(InvariantSample {
            t,
            momentum: analysis::invariant_momentum(u),
            energy: analysis::invariant_energy(u, &r.params),
            mass: analysis::invariant_mass(u),
        });
        let prev = r.pulses.iter().rev().flatten().next();
        let pulse = analysis::track_pulse_with(u, prev, self.cfg.track, self.cfg.peak_refinement).ok().map(|mut p| {
            p.t = t;
            p
        });
        r.pulses.push(pulse);
        let keep = self.samples == 0 || last || (self.cfg.snapshot_every > 0 && self.samples % self.cfg.snapshot_every == 0);
        if keep && r.snapshots.last().map(|s| s.0) != Some(t) {
            r.snapshots.push((t, u.clone()));
        }
        self.samples += 1;
        for o in self.observers.iter_mut() {
            o.observe(t, u)?;
        }
        Ok(())
    }
}

/// Integrates from `u0` to `cfg.t_end`, sampling every `cfg.sample_every`
/// steps and at the final time.
pub fn integrate(
    u0: &SpectralField,
    p: &EquationParams,
    cfg: &StepperConfig,
    observers: &mut [&mut dyn Observer],
) -> std::result::Result<SimulationRecord, IntegrationFailure> {
    let record = SimulationRecord {
        params: *p,
        grid: u0.grid().clone(),
        times: Vec::new(),
        invariants: Vec::new(),
        pulses: Vec::new(),
        snapshots: Vec::new(),
        stats: StageStats::default(),
        steps: 0,
        shortened_last_step: None,
        final_state: u0.clone(),
    };
    let mut rec = Recorder {
        record,
        cfg,
        observers,
        samples: 0,
    };
    let fail = |rec: Recorder<'_, '_, '_>, error: Error| IntegrationFailure {
        record: Box::new(rec.record),
        error,
    };
    let mut stepper = match Stepper::new(p, u0.grid(), cfg) {
        Ok(s) => s,
        Err(e) => return Err(fail(rec, e)),
    };
    let (full, short) = cfg.schedule();
    rec.record.shortened_last_step = short;
    let total = full + usize::from(short.is_some());
    let reference = analysis::invariant_momentum(u0);
    let grid = u0.grid().clone();

    if let Err(e) = rec.sample(0.0, u0, total == 0) {
        return Err(fail(rec, e));
    }
    let mut u = u0.coeffs().to_vec();
    for n in 1..=total {
        let (dt, t) = if n <= full {
            (cfg.dt, n as f64 * cfg.dt)
        } else {
            (short.unwrap_or(cfg.dt), cfg.t_end)
        };
        match stepper.yoshida_step(&u, dt) {
            Ok(next) => u = next,
            Err(e) => {
                rec.record.stats = stepper.stats();
                return Err(fail(rec, e));
            }
        }
        rec.record.steps = n;
        let last = n == total;
        if n % cfg.sample_every == 0 || last {
            let mut field = match realify(&grid, u.clone()) {
                Ok(f) => f,
                Err(e) => return Err(fail(rec, e)),
            };
            if cfg.projection {
                field = project(&field, reference);
                u = field.coeffs().to_vec();
            }
            if let Err(e) = rec.sample(t, &field, last) {
                return Err(fail(rec, e));
            }
            if last {
                rec.record.final_state = field;
            }
        } else if cfg.projection {
            let field = match realify(&grid, u.clone()) {
                Ok(f) => f,
                Err(e) => return Err(fail(rec, e)),
            };
            u = project(&field, reference).coeffs().to_vec();
        }
    }
    rec.record.stats = stepper.stats();
    fill_speed_estimates(&mut rec.record.pulses, analysis::SPEED_WINDOW);
    Ok(rec.record)
}

/// Backward sliding-window slope of the tracked positions.
fn fill_speed_estimates(pulses: &mut [Option<PulseRecord>], window: usize) {
    for i in 0..pulses.len() {
        if i + 1 < window {
            continue;
        }
        let span = &pulses[i + 1 - window..=i];
        if span.iter().any(Option::is_none) {
            continue;
        }
        let pts: Vec<(f64, f64)> = span.iter().flatten().map(|p| (p.t, p.position)).collect();
        if let Some(v) = analysis::slope(&pts) {
            if let Some(p) = pulses[i].as_mut() {
                p.speed_estimate = Some(v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn benjamin_params() -> EquationParams {
        EquationParams::gbenjamin(2, 1.5).with_speed(0.75)
    }

    #[test]
    fn coefficients() {
        let [b1, b2, b3] = yoshida_coefficients();
        assert!((b1 - 1.3512071919596578).abs() < 1e-15);
        assert!((b2 + 1.7024143839193153).abs() < 1e-15);
        assert_eq!(b1, b3);
        assert!((b1 + b2 + b3 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_field_has_zero_rhs() {
        let g = PeriodicGrid::new(PI, 32).unwrap();
        let u = SpectralField::from_fn(&g, |_| 0.7);
        let r = rhs(&u, &benjamin_params()).unwrap();
        assert!(r.max_abs() < 1e-15);
    }

    #[test]
    fn rhs_linear_part_matches_composed_symbols() {
        // tiny amplitude: the nonlinear term is O(eps^3)
        let g = PeriodicGrid::new(PI, 64).unwrap();
        let p = EquationParams::new(0.5, 1, 2, 0.4, 1.3).unwrap();
        let eps = 1e-7;
        let u = SpectralField::from_fn(&g, |x| eps * (3.0 * x).cos());
        let r = rhs(&u, &p).unwrap();
        // d/dx of L-symbol applied: sigma(3) * (-3 sin 3x)
        let sigma = 1.3 * 9.0 - 0.4 * 3.0;
        for (x, v) in g.nodes().iter().zip(r.values()) {
            let expected = eps * sigma * (-3.0 * (3.0 * x).sin());
            assert!((v - expected).abs() < 1e-12 * eps.max(1.0) + 1e-13, "{v} {expected}");
        }
    }

    #[test]
    fn rhs_has_zero_mean() {
        let g = PeriodicGrid::new(10.0, 128).unwrap();
        let u = SpectralField::from_fn(&g, |x| (-(x * x)).exp() + 0.3 * (0.2 * PI * x).sin());
        let r = rhs(&u, &benjamin_params()).unwrap();
        assert!(r.coeffs()[0].norm() < 1e-15);
    }

    #[test]
    fn zero_field_substep_is_identity() {
        let g = PeriodicGrid::new(10.0, 64).unwrap();
        let u = SpectralField::zeros(&g);
        let y = midpoint_substep(&u, 0.1, &benjamin_params(), &StepperConfig::default()).unwrap();
        assert_eq!(y.max_abs(), 0.0);
    }

    #[test]
    fn linear_substep_is_cayley_map() {
        let g = PeriodicGrid::new(8.0, 128).unwrap();
        let p = EquationParams::new(0.5, 1, 2, 0.8, 1.0).unwrap();
        let eps = 1e-9;
        let u = SpectralField::from_fn(&g, |x| eps * (-(x * x)).exp());
        let tau = 0.05;
        let y = midpoint_substep(&u, tau, &p, &StepperConfig::default()).unwrap();
        for (j, (z, &k)) in u.coeffs().iter().zip(g.wavenumbers()).enumerate() {
            let lam = if j == g.nyquist_slot() {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, k * p.dispersion_at(k))
            };
            let expected = z * (1.0 + lam * tau / 2.0) / (1.0 - lam * tau / 2.0);
            // nonlinear term is O(eps^3)
            assert!((y.coeffs()[j] - expected).norm() < 1e-13 * eps);
        }
    }

    #[test]
    fn scalar_surrogate_midpoint_and_order() {
        // u' = lambda u through the linear part: one mode with purely
        // imaginary lambda behaves exactly like the scalar recurrences.
        let g = PeriodicGrid::new(PI, 16).unwrap();
        let p = EquationParams::new(0.0, 1, 2, 0.0, 1.0).unwrap();
        let eps = 1e-12;
        let u = SpectralField::from_fn(&g, |x| eps * x.cos());
        let lam = Complex64::new(0.0, 1.0); // i kappa sigma at kappa = 1
        let defect = |dt: f64| {
            let y = yoshida_step(&u, dt, &p, &StepperConfig::default()).unwrap();
            let exact = u.coeffs()[1] * (lam * dt).exp();
            (y.coeffs()[1] - exact).norm() / u.coeffs()[1].norm()
        };
        let ratio = defect(0.4) / defect(0.2);
        assert!((ratio - 32.0).abs() < 4.0, "{ratio}");
        let tau = 0.1;
        let y = midpoint_substep(&u, tau, &p, &StepperConfig::default()).unwrap();
        let m = (1.0 + lam * tau / 2.0) / (1.0 - lam * tau / 2.0);
        assert!((y.coeffs()[1] - u.coeffs()[1] * m).norm() < 1e-14 * eps);
    }

    #[test]
    fn linear_step_conserves_momentum() {
        let g = PeriodicGrid::new(20.0, 256).unwrap();
        let p = EquationParams::new(0.5, 1, 2, 1.2, 1.0).unwrap();
        let eps = 1e-6;
        let u = SpectralField::from_fn(&g, |x| eps * (-(x * x) / 4.0).exp() * (2.0 * x).cos());
        let i0 = analysis::invariant_momentum(&u);
        let y = yoshida_step(&u, 0.1, &p, &StepperConfig::default()).unwrap();
        assert_relative_eq!(analysis::invariant_momentum(&y), i0, max_relative = 1e-12);
    }

    #[test]
    fn projection_keeps_mass_and_momentum() {
        let g = PeriodicGrid::new(16.0, 128).unwrap();
        let u = SpectralField::from_fn(&g, |x| 0.2 + 0.8 / (x / 2.0).cosh().powi(2));
        let (c0, i0) = (analysis::invariant_mass(&u), analysis::invariant_momentum(&u));
        let v = project(&u.scaled(1.01), i0);
        assert_relative_eq!(analysis::invariant_momentum(&v), i0, max_relative = 1e-14);
        let cfg = StepperConfig { projection: true, ..Default::default() };
        let w = yoshida_step(&u, 0.05, &benjamin_params(), &cfg).unwrap();
        assert_relative_eq!(analysis::invariant_momentum(&w), i0, max_relative = 1e-14);
        assert!((analysis::invariant_mass(&w) - c0).abs() < 1e-13);
        // The mean is untouched by the rescale.
        let shifted = project(&u, 2.0 * i0);
        assert!((analysis::invariant_mass(&shifted) - c0).abs() < 1e-13);
    }

    #[test]
    fn stage_divergence_reports_history() {
        let g = PeriodicGrid::new(10.0, 64).unwrap();
        let u = SpectralField::from_fn(&g, |x| 50.0 / (x * x + 1.0));
        let cfg = StepperConfig {
            stage_max_sweeps: 2,
            ..Default::default()
        };
        match midpoint_substep(&u, 0.5, &benjamin_params(), &cfg) {
            Err(Error::StageDivergence { sweeps, increments }) => {
                assert_eq!(sweeps, 2);
                assert_eq!(increments.len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schedule_detects_shortened_step() {
        let cfg = StepperConfig {
            dt: 0.3,
            t_end: 1.0,
            ..Default::default()
        };
        let (n, s) = cfg.schedule();
        assert_eq!(n, 3);
        assert!((s.unwrap() - 0.1).abs() < 1e-14);
        let cfg = StepperConfig {
            dt: 1.5625e-3,
            t_end: 100.0,
            ..Default::default()
        };
        assert_eq!(cfg.schedule(), (64000, None));
    }

    #[test]
    fn zero_data_stays_zero() {
        let g = PeriodicGrid::new(10.0, 64).unwrap();
        let cfg = StepperConfig {
            dt: 0.01,
            t_end: 0.1,
            sample_every: 2,
            ..Default::default()
        };
        let rec = integrate(&SpectralField::zeros(&g), &benjamin_params(), &cfg, &mut []).unwrap();
        assert_eq!(rec.final_state.max_abs(), 0.0);
        assert_eq!(rec.times.len(), 6);
        assert!(rec.pulses.iter().all(Option::is_none));
        assert!(rec.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn observers_and_short_last_step() {
        let g = PeriodicGrid::new(10.0, 64).unwrap();
        let u = SpectralField::from_fn(&g, |x| 0.5 / (x / 2.0).cosh().powi(2));
        let cfg = StepperConfig {
            dt: 0.03,
            t_end: 0.1,
            sample_every: 1,
            ..Default::default()
        };
        let mut seen = Vec::new();
        let mut obs = |t: f64, _: &SpectralField| -> Result<()> {
            seen.push(t);
            Ok(())
        };
        let rec = integrate(&u, &benjamin_params(), &cfg, &mut [&mut obs]).unwrap();
        assert_eq!(rec.steps, 4);
        assert!(rec.shortened_last_step.is_some());
        assert!((rec.times.last().unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(seen.len(), 5);
        assert_eq!(rec.snapshots.len(), 2);
    }

    #[test]
    fn failure_keeps_partial_record() {
        let g = PeriodicGrid::new(10.0, 64).unwrap();
        let u = SpectralField::from_fn(&g, |x| 50.0 / (x * x + 1.0));
        let cfg = StepperConfig {
            dt: 0.5,
            t_end: 5.0,
            stage_max_sweeps: 3,
            ..Default::default()
        };
        let err = integrate(&u, &benjamin_params(), &cfg, &mut []).unwrap_err();
        assert!(matches!(err.error, Error::StageDivergence { .. }));
        assert_eq!(err.record.times, vec![0.0]);
    }
}
