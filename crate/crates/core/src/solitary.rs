//! Solitary-wave profiles of
//!
//! ```text
//! -c_s phi + F(phi) - L phi = 0
//! ```
//!
//! computed with the Petviashvili iteration in Fourier space,
//!
//! ```text
//! m(phi)      = sum_k sigma_k |phi_k|^2 / sum_k F(phi)_k conj(phi_k)
//! phi_k^{new} = m(phi)^eps F(phi)_k / sigma_k,      sigma_k = c_s + delta |kappa_k|^{2m} - gamma |kappa_k|^{2r}
//! ```
//!
//! optionally wrapped in restarted minimal polynomial extrapolation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::accel::{self, Evaluation, FixedPointMap, IterateKind, MpeConfig};
use crate::error::{Error, Result};
use crate::spectral::{abs_pow, EquationParams, MultiplierSymbol, PeriodicGrid, SpectralField};

/// `s(r, m) = (r/m) (m/r - 1)^{(m-r)/m}`.
pub fn s_rm(r: f64, m: u32) -> f64 {
    let m = m as f64;
    (r / m) * (m / r - 1.0).powf((m - r) / m)
}

/// Largest `gamma` for which the resolvent symbol stays positive at speed
/// `c_s`: `gamma_max = delta^{r/m} c_s^{(m-r)/m} / s(r, m)`. Infinite when
/// `r = 0`.
pub fn gamma_max(p: &EquationParams) -> Result<f64> {
    let c = p.c_s()?;
    if !(p.r < p.m as f64) {
        return Err(Error::invalid(format!("r = {} must be below m = {}", p.r, p.m)));
    }
    if !(c > 0.0 && p.delta > 0.0) {
        return Err(Error::invalid("gamma_max needs c_s > 0 and delta > 0"));
    }
    if p.r == 0.0 {
        return Ok(f64::INFINITY);
    }
    let m = p.m as f64;
    Ok(p.delta.powf(p.r / m) * c.powf((m - p.r) / m) / s_rm(p.r, p.m))
}

/// Fails with [`Error::Inadmissible`] unless `gamma < gamma_max`.
pub fn check_admissible(p: &EquationParams) -> Result<f64> {
    p.validate()?;
    let gm = gamma_max(p)?;
    if p.gamma >= gm {
        return Err(Error::Inadmissible {
            gamma: p.gamma,
            gamma_max: gm,
        });
    }
    Ok(gm)
}

/// Scalings `phi(X) = A psi(B X)` that take the profile equation to the
/// normalized form `psi - psi^{q+1} - D^{2m} psi - (gamma~/s(r,m)) H^{2r} psi = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedForm {
    pub r: f64,
    pub m: u32,
    pub q: u32,
    /// `A(q) = ((q+1) c_s)^{1/q}`
    pub amplitude_scale: f64,
    /// `|B| = (c_s/delta)^{1/(2m)}`
    pub spatial_scale: f64,
    pub gamma_tilde: f64,
}

pub fn normalize(p: &EquationParams) -> Result<NormalizedForm> {
    let gm = check_admissible(p)?;
    let c = p.c_s()?;
    let q = p.q as f64;
    Ok(NormalizedForm {
        r: p.r,
        m: p.m,
        q: p.q,
        amplitude_scale: ((q + 1.0) * c).powf(1.0 / q),
        spatial_scale: (c / p.delta).powf(1.0 / (2.0 * p.m as f64)),
        gamma_tilde: if gm.is_finite() { p.gamma / gm } else { 0.0 },
    })
}

impl NormalizedForm {
    /// Recovers `(gamma, c_s, delta)` from the scalings.
    pub fn params(&self) -> EquationParams {
        let q = self.q as f64;
        let c = self.amplitude_scale.powf(q) / (q + 1.0);
        let delta = c / self.spatial_scale.powf(2.0 * self.m as f64);
        let base = EquationParams {
            r: self.r,
            m: self.m,
            q: self.q,
            gamma: 0.0,
            delta,
            speed: Some(c),
        };
        let gm = gamma_max(&base).unwrap_or(f64::INFINITY);
        base.with_gamma(if gm.is_finite() { self.gamma_tilde * gm } else { 0.0 })
    }

    /// The normalized profile problem on `grid` (coordinates `Z`).
    pub fn equation(&self, grid: &PeriodicGrid) -> Result<ProfileEquation> {
        ProfileEquation::normalized(self.q, self.r, self.m, self.gamma_tilde, grid)
    }

    /// Maps a normalized profile `psi(Z)` to `phi(X) = A psi(B X)`. The
    /// returned field lives on the grid of half-length `l_Z / B`.
    pub fn denormalize(&self, psi: &SpectralField) -> Result<SpectralField> {
        let g = psi.grid();
        let grid = PeriodicGrid::new(g.half_length() / self.spatial_scale, g.len())?;
        let values = psi.values().iter().map(|v| self.amplitude_scale * v).collect();
        SpectralField::from_values(&grid, values)
    }
}

/// Discretized profile equation `sigma_k phi_k = (scale F(phi))_k`.
///
/// `nonlinear_scale` is 1 for the physical equation and `q + 1` for the
/// normalized one, where the nonlinearity is `psi^{q+1}`.
#[derive(Clone, Debug)]
pub struct ProfileEquation {
    pub params: EquationParams,
    pub nonlinear_scale: f64,
    pub normalized: bool,
    resolvent: MultiplierSymbol,
}

impl ProfileEquation {
    pub fn new(params: &EquationParams, grid: &PeriodicGrid) -> Result<Self> {
        check_admissible(params)?;
        Self::build(*params, 1.0, false, grid)
    }

    /// Normalized equation with `c_s = delta = 1`, `gamma = gamma~ / s(r, m)`.
    pub fn normalized(q: u32, r: f64, m: u32, gamma_tilde: f64, grid: &PeriodicGrid) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::invalid("the normalized form needs r > 0"));
        }
        if !(0.0..1.0).contains(&gamma_tilde) {
            return Err(Error::invalid(format!(
                "gamma~ = {gamma_tilde} must lie in [0, 1)"
            )));
        }
        let params = EquationParams {
            r,
            m,
            q,
            gamma: gamma_tilde / s_rm(r, m),
            delta: 1.0,
            speed: Some(1.0),
        };
        params.validate()?;
        Self::build(params, (q + 1) as f64, true, grid)
    }

    fn build(params: EquationParams, nonlinear_scale: f64, normalized: bool, grid: &PeriodicGrid) -> Result<Self> {
        let c = params.c_s()?;
        let resolvent = MultiplierSymbol::from_fn(grid, |k| c + params.dispersion_at(k));
        let (mode, value) = resolvent.min();
        if !(value > 0.0) {
            return Err(Error::InadmissibleSymbol { mode, value });
        }
        Ok(ProfileEquation {
            params,
            nonlinear_scale,
            normalized,
            resolvent,
        })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.resolvent.grid()
    }

    pub fn resolvent(&self) -> &MultiplierSymbol {
        &self.resolvent
    }

    pub fn speed(&self) -> f64 {
        self.params.speed.unwrap_or(1.0)
    }

    /// Default homogeneity exponent `(q+1)/q`.
    pub fn default_epsilon(&self) -> f64 {
        (self.params.q + 1) as f64 / self.params.q as f64
    }

    fn nonlinear_values(&self, phi: &[f64]) -> Vec<f64> {
        let p = (self.params.q + 1) as i32;
        let s = self.nonlinear_scale / (self.params.q + 1) as f64;
        phi.iter().map(|v| s * v.powi(p)).collect()
    }

    /// Closed-form gKdV solitary wave `A sech^{2/q}(K (x - center))` for the
    /// same `(q, c_s, delta)`, ignoring the nonlocal term.
    pub fn gkdv_profile(&self, center: f64) -> SpectralField {
        let (amp, k) = gkdv_constants(self.params.q, self.speed(), self.params.delta);
        let amp = amp / self.nonlinear_scale.powf(1.0 / self.params.q as f64);
        let grid = self.grid().clone();
        let e = 2.0 / self.params.q as f64;
        SpectralField::from_fn(&grid, |x| {
            let d = grid.wrap(x - center);
            amp * (1.0 / (k * d).cosh()).powf(e)
        })
    }

    /// Sum of gKdV profiles at `centers`.
    pub fn multipulse_seed(&self, centers: &[f64]) -> SpectralField {
        let (_, k) = gkdv_constants(self.params.q, self.speed(), self.params.delta);
        warn_overlap(centers, k, self.grid());
        let mut values = vec![0.0; self.grid().len()];
        for &c in centers {
            let one = self.gkdv_profile(c);
            values.iter_mut().zip(one.values()).for_each(|(a, b)| *a += b);
        }
        SpectralField::from_values(self.grid(), values).expect("length matches grid")
    }

    fn check_field(&self, phi: &SpectralField) -> Result<()> {
        self.grid().check_same(phi.grid())
    }

    /// Stabilizing factor `m(phi)`.
    pub fn stabilizing_factor(&self, phi: &SpectralField) -> Result<f64> {
        self.check_field(phi)?;
        let f = SpectralField::from_values(self.grid(), self.nonlinear_values(phi.values()))?;
        stabilizing_ratio(self.resolvent.values(), phi.coeffs(), f.coeffs())
    }

    /// One Petviashvili step `phi_k <- m(phi)^eps F(phi)_k / sigma_k`.
    pub fn step(&self, phi: &SpectralField, epsilon: f64) -> Result<SpectralField> {
        self.check_field(phi)?;
        let f = SpectralField::from_values(self.grid(), self.nonlinear_values(phi.values()))?;
        let m = stabilizing_ratio(self.resolvent.values(), phi.coeffs(), f.coeffs())?;
        let factor = signed_pow(m, epsilon);
        let coeffs = f
            .coeffs()
            .iter()
            .zip(self.resolvent.values())
            .map(|(c, s)| c * (factor / s))
            .collect();
        SpectralField::from_coeffs(self.grid(), coeffs)
    }

    /// Residual `sigma phi - F(phi)` as grid values.
    pub fn residual(&self, phi: &SpectralField) -> Result<SpectralField> {
        self.check_field(phi)?;
        let f = SpectralField::from_values(self.grid(), self.nonlinear_values(phi.values()))?;
        let coeffs = phi
            .coeffs()
            .iter()
            .zip(f.coeffs())
            .zip(self.resolvent.values())
            .map(|((p, fk), s)| p * s - fk)
            .collect();
        SpectralField::from_coeffs(self.grid(), coeffs)
    }

    /// Runs the (optionally accelerated) Petviashvili iteration from `seed`.
    pub fn solve(&self, seed: &SpectralField, cfg: &PetviashviliConfig) -> Result<WaveProfile> {
        self.check_field(seed)?;
        cfg.validate(self.params.q)?;
        if seed.max_abs() == 0.0 {
            return Err(Error::IterationDegenerate { trace: Vec::new() });
        }
        let epsilon = cfg.epsilon.unwrap_or_else(|| self.default_epsilon());
        let mut map = PetviashviliMap::new(self, epsilon, cfg.stop_mode, cfg.max_iters);
        let tol = cfg.tol;

        let (solution, metric) = match &cfg.accel {
            Some(mpe) => {
                let outcome = match accel::cycle(&mut map, seed.values().to_vec(), mpe, |m| m <= tol) {
                    Ok(o) => o,
                    Err(Error::IterationDegenerate { .. }) => {
                        return Err(Error::IterationDegenerate { trace: map.trace });
                    }
                    Err(e) => return Err(e),
                };
                for (entry, event) in map.trace.iter_mut().zip(&outcome.history) {
                    entry.kind = event.kind;
                    entry.accepted = event.accepted;
                }
                (outcome.solution, outcome.metric)
            }
            None => {
                let mut current = seed.values().to_vec();
                let mut metric;
                loop {
                    let ev = match map.evaluate(&current) {
                        Ok(ev) => ev,
                        Err(Error::IterationDegenerate { .. }) => {
                            return Err(Error::IterationDegenerate { trace: map.trace });
                        }
                        Err(e) => return Err(e),
                    };
                    metric = ev.metric;
                    if metric <= tol || map.exhausted() {
                        break;
                    }
                    current = ev.image;
                }
                (current, metric)
            }
        };

        let field = SpectralField::from_values(self.grid(), solution)?;
        let converged = metric <= tol;
        let iterations = map.trace.len();
        let final_entry = map
            .trace
            .iter()
            .rev()
            .find(|e| e.accepted)
            .copied()
            .unwrap_or(TraceEntry::placeholder());
        Ok(WaveProfile {
            field,
            params: self.params,
            nonlinear_scale: self.nonlinear_scale,
            normalized: self.normalized,
            trace: map.trace,
            converged,
            iterations,
            final_metric: metric,
            final_residual: final_entry.residual,
            final_sfe: final_entry.sfe,
        })
    }
}

fn warn_overlap(centers: &[f64], k: f64, grid: &PeriodicGrid) {
    let decay = 1.0 / k;
    for (i, a) in centers.iter().enumerate() {
        for b in &centers[i + 1..] {
            if grid.wrap(a - b).abs() < 6.0 * decay {
                log::warn!("seed centers {a} and {b} are closer than six decay lengths ({decay:.3})");
            }
        }
    }
}

/// `(A, K)` of the gKdV solitary wave `A sech^{2/q}(K x)` solving
/// `-c phi + phi^{q+1}/(q+1) + delta phi'' = 0`.
pub fn gkdv_constants(q: u32, c: f64, delta: f64) -> (f64, f64) {
    let qf = q as f64;
    let amp = (c * (qf + 1.0) * (qf + 2.0) / 2.0).powf(1.0 / qf);
    let k = 0.5 * qf * (c / delta).sqrt();
    (amp, k)
}

/// gKdV solitary wave for the parameters' `(q, c_s, delta)` centered at
/// `center` (distance measured periodically). `gamma`, `r` and `m` are
/// ignored, which makes this the default seed for every member of the family.
pub fn gkdv_seed(p: &EquationParams, grid: &PeriodicGrid, center: f64) -> Result<SpectralField> {
    let c = p.c_s()?;
    let (amp, k) = gkdv_constants(p.q, c, p.delta);
    let e = 2.0 / p.q as f64;
    Ok(SpectralField::from_fn(grid, |x| {
        amp * (1.0 / (k * grid.wrap(x - center)).cosh()).powf(e)
    }))
}

/// Pointwise sum of [`gkdv_seed`] at each center; an empty list gives zero.
pub fn multipulse_seed(p: &EquationParams, grid: &PeriodicGrid, centers: &[f64]) -> Result<SpectralField> {
    let c = p.c_s()?;
    let (_, k) = gkdv_constants(p.q, c, p.delta);
    warn_overlap(centers, k, grid);
    let mut values = vec![0.0; grid.len()];
    for &x0 in centers {
        let one = gkdv_seed(p, grid, x0)?;
        values.iter_mut().zip(one.values()).for_each(|(a, b)| *a += b);
    }
    SpectralField::from_values(grid, values)
}

pub fn stabilizing_factor(phi: &SpectralField, p: &EquationParams) -> Result<f64> {
    ProfileEquation::new(p, phi.grid())?.stabilizing_factor(phi)
}

pub fn petviashvili_step(phi: &SpectralField, p: &EquationParams, epsilon: f64) -> Result<SpectralField> {
    ProfileEquation::new(p, phi.grid())?.step(phi, epsilon)
}

pub fn solve_profile(seed: &SpectralField, p: &EquationParams, cfg: &PetviashviliConfig) -> Result<WaveProfile> {
    ProfileEquation::new(p, seed.grid())?.solve(seed, cfg)
}

fn signed_pow(m: f64, e: f64) -> f64 {
    m.signum() * m.abs().powf(e)
}

fn stabilizing_ratio(sigma: &[f64], phi: &[Complex64], f: &[Complex64]) -> Result<f64> {
    let mut num = 0.0;
    let mut phi2 = 0.0;
    let mut f2 = 0.0;
    let mut den = Complex64::new(0.0, 0.0);
    for ((s, p), fk) in sigma.iter().zip(phi).zip(f) {
        let a = p.norm_sqr();
        num += s * a;
        phi2 += a;
        f2 += fk.norm_sqr();
        den += fk * p.conj();
    }
    // relative to the Cauchy-Schwarz bound, so the test is scale invariant
    if !(den.norm() > 1e-14 * (phi2 * f2).sqrt()) || !num.is_finite() {
        return Err(Error::IterationDegenerate { trace: Vec::new() });
    }
    debug_assert!(den.im.abs() <= 1e-10 * den.norm().max(f64::MIN_POSITIVE), "{den}");
    Ok(num / den.re)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopMode {
    /// Discrete 2-norm scaled by `sqrt(h)`.
    ResidualEuclid,
    ResidualMax,
    /// Euclidean residual divided by the Euclidean norm of the iterate.
    ResidualRelative,
    /// `|1 - m(phi)|`.
    Sfe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PetviashviliConfig {
    /// Defaults to `(q+1)/q`.
    pub epsilon: Option<f64>,
    pub tol: f64,
    pub max_iters: usize,
    pub stop_mode: StopMode,
    pub accel: Option<MpeConfig>,
}

impl Default for PetviashviliConfig {
    fn default() -> Self {
        PetviashviliConfig {
            epsilon: None,
            tol: 1e-12,
            max_iters: 500,
            stop_mode: StopMode::ResidualEuclid,
            accel: Some(MpeConfig::default()),
        }
    }
}

impl PetviashviliConfig {
    pub fn plain() -> Self {
        PetviashviliConfig {
            accel: None,
            ..Default::default()
        }
    }

    pub fn validate(&self, q: u32) -> Result<()> {
        if let Some(e) = self.epsilon {
            let upper = (q + 2) as f64 / q as f64;
            if !(e > 1.0 && e < upper) {
                return Err(Error::invalid(format!("epsilon = {e} must lie in (1, {upper})")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if self.max_iters < 1 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if let Some(a) = &self.accel {
            a.validate()?;
        }
        Ok(())
    }
}

/// Diagnostics of one evaluated iterate (one application of the step).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub kind: IterateKind,
    /// False for extrapolants rejected by the acceleration guard.
    pub accepted: bool,
    pub sfe: f64,
    pub residual: f64,
}

impl TraceEntry {
    fn placeholder() -> Self {
        TraceEntry {
            iteration: 0,
            kind: IterateKind::Base,
            accepted: true,
            sfe: f64::NAN,
            residual: f64::NAN,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WaveProfile {
    pub field: SpectralField,
    pub params: EquationParams,
    pub nonlinear_scale: f64,
    pub normalized: bool,
    /// One entry per application of the Petviashvili step.
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub iterations: usize,
    /// Final value of the stopping metric.
    pub final_metric: f64,
    /// Final residual in the configured norm (Euclidean for SFE stopping).
    pub final_residual: f64,
    pub final_sfe: f64,
}

impl WaveProfile {
    /// Peak value of the profile.
    pub fn amplitude(&self) -> f64 {
        self.field.values().iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }
}

struct PetviashviliMap<'a> {
    eq: &'a ProfileEquation,
    epsilon: f64,
    stop_mode: StopMode,
    budget: usize,
    trace: Vec<TraceEntry>,
    buf: Vec<Complex64>,
    fbuf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl<'a> PetviashviliMap<'a> {
    fn new(eq: &'a ProfileEquation, epsilon: f64, stop_mode: StopMode, budget: usize) -> Self {
        let n = eq.grid().len();
        PetviashviliMap {
            eq,
            epsilon,
            stop_mode,
            budget,
            trace: Vec::new(),
            buf: vec![Complex64::new(0.0, 0.0); n],
            fbuf: vec![Complex64::new(0.0, 0.0); n],
            scratch: vec![Complex64::new(0.0, 0.0); eq.grid().scratch_len()],
        }
    }
}

impl FixedPointMap for PetviashviliMap<'_> {
    fn evaluate(&mut self, y: &[f64]) -> Result<Evaluation> {
        let grid = self.eq.grid();
        let sigma = self.eq.resolvent.values();
        let two_l = 2.0 * grid.half_length();

        for (b, v) in self.buf.iter_mut().zip(y) {
            *b = Complex64::new(*v, 0.0);
        }
        grid.forward_with_scratch(&mut self.buf, &mut self.scratch);
        for (b, v) in self.fbuf.iter_mut().zip(self.eq.nonlinear_values(y)) {
            *b = Complex64::new(v, 0.0);
        }
        grid.forward_with_scratch(&mut self.fbuf, &mut self.scratch);

        let m = stabilizing_ratio(sigma, &self.buf, &self.fbuf)?;
        let sfe = (1.0 - m).abs();

        let mut res2 = 0.0;
        let mut phi2 = 0.0;
        for ((p, f), s) in self.buf.iter().zip(&self.fbuf).zip(sigma) {
            res2 += (p * s - f).norm_sqr();
            phi2 += p.norm_sqr();
        }
        let euclid = (two_l * res2).sqrt();
        let residual = match self.stop_mode {
            StopMode::ResidualEuclid | StopMode::Sfe => euclid,
            StopMode::ResidualRelative => euclid / (two_l * phi2).sqrt(),
            StopMode::ResidualMax => {
                let mut r: Vec<Complex64> = self
                    .buf
                    .iter()
                    .zip(&self.fbuf)
                    .zip(sigma)
                    .map(|((p, f), s)| p * s - f)
                    .collect();
                grid.inverse_with_scratch(&mut r, &mut self.scratch);
                r.iter().fold(0.0f64, |a, z| a.max(z.re.abs()))
            }
        };
        let metric = match self.stop_mode {
            StopMode::Sfe => sfe,
            _ => residual,
        };
        self.trace.push(TraceEntry {
            iteration: self.trace.len() + 1,
            kind: IterateKind::Base,
            accepted: true,
            sfe,
            residual,
        });

        let factor = signed_pow(m, self.epsilon);
        for ((f, s), b) in self.fbuf.iter().zip(sigma).zip(self.buf.iter_mut()) {
            *b = f * (factor / s);
        }
        grid.inverse_with_scratch(&mut self.buf, &mut self.scratch);
        let image = self.buf.iter().map(|z| z.re).collect();
        Ok(Evaluation { metric, image })
    }

    fn exhausted(&self) -> bool {
        self.trace.len() >= self.budget
    }
}

/// Domain controls for [`generate_profile`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainOptions {
    pub half_length: f64,
    pub nodes: usize,
    /// Maximum number of automatic domain doublings (step size kept).
    pub max_doublings: u32,
    /// Relative tail level at `x = +-l` that triggers a doubling.
    pub tail_threshold: f64,
}

impl Default for DomainOptions {
    fn default() -> Self {
        DomainOptions {
            half_length: 128.0,
            nodes: 2048,
            max_doublings: 2,
            tail_threshold: 1e-8,
        }
    }
}

/// Relative size of the profile at the domain ends.
pub fn tail_ratio(phi: &SpectralField) -> f64 {
    let peak = phi.max_abs();
    if peak == 0.0 {
        return 0.0;
    }
    let v = phi.values();
    let ends = v[0].abs().max(v[1].abs()).max(v[v.len() - 1].abs());
    ends / peak
}

/// Seeds with gKdV pulses at `centers`, solves, and doubles the domain
/// while the converged tail at `x = +-l` exceeds the threshold.
pub fn generate_profile(
    make_equation: impl Fn(&PeriodicGrid) -> Result<ProfileEquation>,
    centers: &[f64],
    domain: &DomainOptions,
    cfg: &PetviashviliConfig,
) -> Result<WaveProfile> {
    let mut l = domain.half_length;
    let mut n = domain.nodes;
    let mut doublings = 0;
    loop {
        let grid = PeriodicGrid::new(l, n)?;
        let eq = make_equation(&grid)?;
        let seed = eq.multipulse_seed(centers);
        let profile = eq.solve(&seed, cfg)?;
        let tail = tail_ratio(&profile.field);
        if tail <= domain.tail_threshold || doublings >= domain.max_doublings || !profile.converged {
            if tail > domain.tail_threshold {
                log::warn!(
                    "profile tail at x = +-{l} is {tail:.3e} of the peak after {doublings} doublings"
                );
            }
            return Ok(profile);
        }
        doublings += 1;
        l *= 2.0;
        n *= 2;
    }
}

/// Relative residual of `phi` in the profile equation, computed with an
/// independently assembled symbol: `max|sigma phi - F(phi)| / max|phi|`.
pub fn profile_residual(phi: &SpectralField, p: &EquationParams) -> Result<f64> {
    let c = p.c_s()?;
    let grid = phi.grid();
    let lin: Vec<Complex64> = phi
        .coeffs()
        .iter()
        .zip(grid.wavenumbers())
        .map(|(z, &k)| {
            let a = k.abs();
            z * (c + p.delta * abs_pow(a, 2.0 * p.m as f64) - p.gamma * abs_pow(a, 2.0 * p.r))
        })
        .collect();
    let lin = grid.inverse(&lin)?;
    let q = p.q as i32;
    let err = lin
        .iter()
        .zip(phi.values())
        .fold(0.0f64, |e, (l, v)| e.max((l - v.powi(q + 1) / (q + 1) as f64).abs()));
    Ok(err / phi.max_abs())
}
