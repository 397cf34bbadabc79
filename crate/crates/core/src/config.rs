//! Scenario files (TOML). Every section rejects unknown keys.
//!
//! ```toml
//! [equation]
//! r = 0.5
//! m = 1
//! q = 2
//! gamma = 1.5
//! delta = 1.0
//!
//! [grid]
//! l = 128.0
//! n = 2048
//!
//! [solver]
//! tol = 1e-12
//!
//! [evolve]
//! dt = 1.5625e-3
//! t_end = 100.0
//!
//! [scenario]
//! kind = "evolve"
//! speeds = [0.75]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::accel::MpeConfig;
use crate::analysis::{FitModel, TrackMode};
use crate::error::{Error, Result};
use crate::evolve::StepperConfig;
use crate::solitary::{DomainOptions, PetviashviliConfig, StopMode};
use crate::spectral::{EquationParams, PeriodicGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub equation: EquationSection,
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub evolve: StepperConfig,
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquationSection {
    #[serde(default = "half")]
    pub r: f64,
    #[serde(default = "one_u32")]
    pub m: u32,
    pub q: u32,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "one_f64")]
    pub delta: f64,
    /// Solve the normalized profile equation; `gamma_tilde` replaces
    /// `gamma`, `delta` and the speed.
    #[serde(default)]
    pub normalized: bool,
    pub gamma_tilde: Option<f64>,
}

fn half() -> f64 {
    0.5
}
fn one_u32() -> u32 {
    1
}
fn one_f64() -> f64 {
    1.0
}

impl EquationSection {
    pub fn params(&self) -> Result<EquationParams> {
        EquationParams::new(self.r, self.m, self.q, self.gamma, self.delta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub l: f64,
    pub n: usize,
    #[serde(default)]
    pub max_doublings: u32,
    #[serde(default = "tail_default")]
    pub tail_threshold: f64,
}

fn tail_default() -> f64 {
    1e-8
}

impl GridSection {
    pub fn grid(&self) -> Result<PeriodicGrid> {
        PeriodicGrid::new(self.l, self.n)
    }

    pub fn domain(&self) -> DomainOptions {
        DomainOptions {
            half_length: self.l,
            nodes: self.n,
            max_doublings: self.max_doublings,
            tail_threshold: self.tail_threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub epsilon: Option<f64>,
    pub tol: f64,
    pub max_iters: usize,
    pub stop_mode: StopMode,
    /// Set to false for the plain iteration.
    pub accelerate: bool,
    pub mpe: MpeConfig,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = PetviashviliConfig::default();
        SolverSection {
            epsilon: d.epsilon,
            tol: d.tol,
            max_iters: d.max_iters,
            stop_mode: d.stop_mode,
            accelerate: true,
            mpe: MpeConfig::default(),
        }
    }
}

impl SolverSection {
    pub fn petviashvili(&self) -> PetviashviliConfig {
        PetviashviliConfig {
            epsilon: self.epsilon,
            tol: self.tol,
            max_iters: self.max_iters,
            stop_mode: self.stop_mode,
            accel: self.accelerate.then_some(self.mpe),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Generate,
    Evolve,
    Perturb,
    Collide,
    Study,
    Dispersion,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Generate => "generate",
            ScenarioKind::Evolve => "evolve",
            ScenarioKind::Perturb => "perturb",
            ScenarioKind::Collide => "collide",
            ScenarioKind::Study => "study",
            ScenarioKind::Dispersion => "dispersion",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    AmpVsSpeed,
    AmpVsQ,
    Decay,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeKind {
    /// Local maxima of `|phi|` only.
    #[default]
    Maxima,
    /// Interpolated envelope at every node.
    Curve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: ScenarioKind,
    /// Speeds: one per pulse for generate/evolve/perturb/collide.
    #[serde(default)]
    pub speeds: Vec<f64>,
    /// Seed or pulse centers.
    #[serde(default)]
    pub centers: Vec<f64>,
    /// Perturbation factor `A`.
    pub factor: Option<f64>,
    /// Initial profile file for `evolve`, relative to the config file.
    pub profile: Option<PathBuf>,
    pub study: Option<StudyKind>,
    pub c_min: Option<f64>,
    pub c_max: Option<f64>,
    pub c_stride: Option<f64>,
    #[serde(default)]
    pub q_values: Vec<u32>,
    /// Left end of the envelope window (defaults to three decay lengths
    /// past the peak).
    pub envelope_start: Option<f64>,
    /// Envelope data for the decay study.
    #[serde(default)]
    pub envelope: EnvelopeKind,
    /// Fit for the decay study (defaults from `r`).
    pub fit: Option<FitModel>,
    /// Start of the late-time amplitude average.
    #[serde(default = "amp_from")]
    pub amplitude_from: f64,
    /// Start of the late-time speed average.
    #[serde(default = "speed_from")]
    pub speed_from: f64,
    /// Tracking for the main pulse.
    #[serde(default)]
    pub track: Option<TrackMode>,
}

fn amp_from() -> f64 {
    20.0
}
fn speed_from() -> f64 {
    40.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory; relative paths resolve against the output root.
    pub directory: Option<PathBuf>,
    pub formats: Vec<OutputFormat>,
    /// Write a profile snapshot every this many samples (0: first and last).
    pub snapshot_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: None,
            formats: vec![OutputFormat::Csv, OutputFormat::Json],
            snapshot_every: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Type-checks every section against the scenario kind before any work.
    pub fn validate(&self) -> Result<()> {
        let e = &self.equation;
        let p = e.params()?;
        self.grid.grid()?;
        self.solver.petviashvili().validate(p.q)?;
        self.evolve.validate()?;
        let s = &self.scenario;
        if e.normalized {
            match e.gamma_tilde {
                Some(g) if (0.0..1.0).contains(&g) => {}
                _ => return Err(Error::invalid("normalized equations need gamma_tilde in [0, 1)")),
            }
        }
        let need_speed = !e.normalized;
        match s.kind {
            ScenarioKind::Generate => {
                if need_speed && s.speeds.len() != 1 {
                    return Err(Error::invalid("generate needs exactly one speed"));
                }
            }
            ScenarioKind::Evolve => {
                if s.profile.is_none() && s.speeds.len() != 1 {
                    return Err(Error::invalid("evolve needs a profile file or one speed"));
                }
                if e.normalized {
                    return Err(Error::invalid("evolve runs the physical equation; set normalized = false"));
                }
            }
            ScenarioKind::Perturb => {
                match s.factor {
                    Some(a) if a > 0.0 => {}
                    _ => return Err(Error::invalid("perturb needs factor > 0")),
                }
                if s.speeds.len() != 1 || e.normalized {
                    return Err(Error::invalid("perturb needs one speed and the physical equation"));
                }
            }
            ScenarioKind::Collide => {
                if s.speeds.is_empty() || s.speeds.len() != s.centers.len() {
                    return Err(Error::invalid("collide needs matching speeds and centers"));
                }
                if e.normalized {
                    return Err(Error::invalid("collide runs the physical equation"));
                }
            }
            ScenarioKind::Study => match s.study {
                None => return Err(Error::invalid("study needs a study kind")),
                Some(StudyKind::AmpVsSpeed) => {
                    let (Some(a), Some(b), Some(d)) = (s.c_min, s.c_max, s.c_stride) else {
                        return Err(Error::invalid("amp-vs-speed needs c_min, c_max and c_stride"));
                    };
                    if !(a > 0.0 && b >= a && d > 0.0) {
                        return Err(Error::invalid("bad speed range"));
                    }
                }
                Some(StudyKind::AmpVsQ) => {
                    if s.q_values.is_empty() || s.q_values.contains(&0) {
                        return Err(Error::invalid("amp-vs-q needs positive q_values"));
                    }
                    if need_speed && s.speeds.len() != 1 {
                        return Err(Error::invalid("amp-vs-q needs one speed"));
                    }
                }
                Some(StudyKind::Decay) => {
                    if need_speed && s.speeds.len() != 1 {
                        return Err(Error::invalid("decay needs one speed"));
                    }
                }
            },
            ScenarioKind::Dispersion => {
                if s.speeds.len() != 1 {
                    return Err(Error::invalid("dispersion needs one speed"));
                }
            }
        }
        if s.speeds.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::invalid("speeds must be positive"));
        }
        Ok(())
    }

    /// Physical parameters with the `i`-th speed.
    pub fn params_with_speed(&self, i: usize) -> Result<EquationParams> {
        let c = *self
            .scenario
            .speeds
            .get(i)
            .ok_or_else(|| Error::invalid(format!("no speed #{i}")))?;
        Ok(self.equation.params()?.with_speed(c))
    }

    pub fn stepper(&self) -> StepperConfig {
        let mut s = self.evolve.clone();
        if self.output.snapshot_every > 0 {
            s.snapshot_every = self.output.snapshot_every;
        }
        if let Some(t) = self.scenario.track {
            s.track = t;
        }
        s
    }

    pub fn wants(&self, f: OutputFormat) -> bool {
        self.output.formats.contains(&f)
    }
}
