//! Scenario runner behind the `benjamin` binary.
//!
//! Every run writes into one output directory and finishes with
//! `manifest.json`, which lists each produced file with its SHA-256.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{self, FitModel, FitResult, PulseRecord};
use crate::config::{EnvelopeKind, OutputFormat, ScenarioConfig, ScenarioKind, StudyKind};
use crate::error::Error;
use crate::evolve::{self, fmt_f, SimulationRecord};
use crate::io::{self, ProfileFile};
use crate::solitary::{self, ProfileEquation, WaveProfile};
use crate::spectral::{EquationParams, PeriodicGrid, SpectralField};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "BENJAMIN_OUT";
pub const MANIFEST: &str = "manifest.json";

pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const BAD_INPUT: i32 = 2;
    pub const NO_CONVERGENCE: i32 = 3;
    pub const STAGE_DIVERGENCE: i32 = 4;
}

#[derive(Parser, Debug)]
#[command(name = "benjamin", version, about = "Solitary waves of generalized Benjamin-type equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Compute a solitary-wave profile.
    Generate(RunArgs),
    /// Evolve a profile (from file or freshly generated).
    Evolve(RunArgs),
    /// Evolve a profile scaled by a factor.
    Perturb(RunArgs),
    /// Evolve a superposition of profiles.
    Collide(RunArgs),
    /// Amplitude and decay studies.
    Study(RunArgs),
    /// Dispersion analysis.
    Dispersion(RunArgs),
}

impl Command {
    pub fn kind(&self) -> ScenarioKind {
        match self {
            Command::Generate(_) => ScenarioKind::Generate,
            Command::Evolve(_) => ScenarioKind::Evolve,
            Command::Perturb(_) => ScenarioKind::Perturb,
            Command::Collide(_) => ScenarioKind::Collide,
            Command::Study(_) => ScenarioKind::Study,
            Command::Dispersion(_) => ScenarioKind::Dispersion,
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Generate(a)
            | Command::Evolve(a)
            | Command::Perturb(a)
            | Command::Collide(a)
            | Command::Study(a)
            | Command::Dispersion(a) => a,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory. Defaults to `$BENJAMIN_OUT/<name>` (or `runs/<name>`),
    /// where `<name>` is `output.directory` or the config file stem.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel studies.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_)
        | Error::GridMismatch { .. }
        | Error::Inadmissible { .. }
        | Error::InadmissibleSymbol { .. }
        | Error::Parse(_) => exit::BAD_INPUT,
        Error::IterationDegenerate { .. } => exit::NO_CONVERGENCE,
        Error::StageDivergence { .. } => exit::STAGE_DIVERGENCE,
        _ => exit::FAILURE,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: String,
    pub config_path: String,
    pub config: ScenarioConfig,
    pub artifacts: Vec<Artifact>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub stats: Value,
    pub partial: bool,
    pub exit_code: i32,
    pub message: Option<String>,
}

/// Output directory that hashes every file it writes.
pub struct OutputDir {
    root: PathBuf,
    artifacts: Vec<Artifact>,
    csv: bool,
    json: bool,
}

impl OutputDir {
    /// Creates `root`. Files listed by a previous manifest are removed; any
    /// other content makes this fail.
    pub fn create(root: &Path) -> crate::Result<Self> {
        fs::create_dir_all(root)?;
        let old = root.join(MANIFEST);
        if old.exists() {
            let v: Value = serde_json::from_str(&fs::read_to_string(&old)?).map_err(|e| Error::Parse(e.to_string()))?;
            for a in v["artifacts"].as_array().into_iter().flatten() {
                if let Some(p) = a["path"].as_str() {
                    let _ = fs::remove_file(root.join(p));
                }
            }
            fs::remove_file(&old)?;
            remove_empty_dirs(root)?;
        }
        if fs::read_dir(root)?.next().is_some() {
            return Err(Error::invalid(format!(
                "output directory {} holds files not listed in a previous manifest",
                root.display()
            )));
        }
        Ok(OutputDir {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
            csv: true,
            json: true,
        })
    }

    /// Restricts CSV (with its plot scripts) and JSON outputs.
    pub fn with_formats(mut self, csv: bool, json: bool) -> Self {
        self.csv = csv;
        self.json = json;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> crate::Result<()> {
        if !self.csv && (rel.ends_with(".csv") || rel.ends_with(".gp")) {
            return Ok(());
        }
        let bytes = contents.as_ref();
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, bytes)?;
        let art = Artifact {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        };
        match self.artifacts.iter_mut().find(|a| a.path == rel) {
            Some(a) => *a = art,
            None => self.artifacts.push(art),
        }
        Ok(())
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> crate::Result<()> {
        if !self.json {
            return Ok(());
        }
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
        self.write(rel, text + "\n")
    }

    fn finish(self, mut manifest: RunManifest) -> crate::Result<PathBuf> {
        manifest.artifacts = self.artifacts;
        let path = self.root.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Internal(e.to_string()))?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

fn remove_empty_dirs(dir: &Path) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            remove_empty_dirs(&p)?;
            if fs::read_dir(&p)?.next().is_none() {
                fs::remove_dir(&p)?;
            }
        }
    }
    Ok(())
}

/// Resolves the output directory for a run.
pub fn output_dir(args: &RunArgs, cfg: &ScenarioConfig) -> PathBuf {
    if let Some(out) = &args.out {
        return out.clone();
    }
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    let name = cfg.output.directory.clone().unwrap_or_else(|| {
        PathBuf::from(args.config.file_stem().unwrap_or_else(|| "run".as_ref()))
    });
    root.join(name)
}

/// Failure of a scenario after the output directory exists.
struct Failure {
    code: i32,
    message: String,
    partial: bool,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
            partial: false,
        }
    }
}

type Step<T> = std::result::Result<T, Failure>;

struct Run<'a> {
    cfg: &'a ScenarioConfig,
    config_dir: PathBuf,
    out: OutputDir,
    timings: BTreeMap<String, f64>,
    stats: serde_json::Map<String, Value>,
}

impl Run<'_> {
    fn timed<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let t0 = Instant::now();
        let v = f(self);
        *self.timings.entry(name.to_string()).or_default() += t0.elapsed().as_secs_f64();
        v
    }

    fn stat(&mut self, key: &str, v: Value) {
        self.stats.insert(key.to_string(), v);
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let args = cli.command.args();
    let cfg = match ScenarioConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            log::error!("{}: {e}", args.config.display());
            return exit::BAD_INPUT;
        }
    };
    if cfg.scenario.kind != cli.command.kind() {
        log::error!(
            "config describes a '{}' scenario, not '{}'",
            cfg.scenario.kind.name(),
            cli.command.kind().name()
        );
        return exit::BAD_INPUT;
    }
    if let Some(n) = args.threads {
        if n == 0 {
            log::error!("--threads must be positive");
            return exit::BAD_INPUT;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    let dir = output_dir(args, &cfg);
    let out = match OutputDir::create(&dir) {
        Ok(o) => o.with_formats(cfg.wants(OutputFormat::Csv), cfg.wants(OutputFormat::Json)),
        Err(e) => {
            log::error!("{e}");
            return exit_code(&e).max(exit::FAILURE);
        }
    };
    let mut run = Run {
        cfg: &cfg,
        config_dir: args.config.parent().map(Path::to_path_buf).unwrap_or_default(),
        out,
        timings: BTreeMap::new(),
        stats: serde_json::Map::new(),
    };
    let t0 = Instant::now();
    let result = match cfg.scenario.kind {
        ScenarioKind::Generate => cmd_generate(&mut run),
        ScenarioKind::Evolve => cmd_evolve(&mut run),
        ScenarioKind::Perturb => cmd_perturb(&mut run),
        ScenarioKind::Collide => cmd_collide(&mut run),
        ScenarioKind::Study => cmd_study(&mut run),
        ScenarioKind::Dispersion => cmd_dispersion(&mut run),
    };
    run.timings.insert("total".into(), t0.elapsed().as_secs_f64());
    let (code, message, partial) = match result {
        Ok(()) => (exit::OK, None, false),
        Err(f) => {
            log::error!("{}", f.message);
            (f.code, Some(f.message), f.partial)
        }
    };
    let manifest = RunManifest {
        tool: format!("benjamin {}", env!("CARGO_PKG_VERSION")),
        command: cfg.scenario.kind.name().to_string(),
        config_path: args.config.display().to_string(),
        config: cfg.clone(),
        artifacts: Vec::new(),
        timings: run.timings,
        stats: Value::Object(run.stats),
        partial,
        exit_code: code,
        message,
    };
    match run.out.finish(manifest) {
        Ok(p) => log::info!("wrote {}", p.display()),
        Err(e) => {
            log::error!("cannot write manifest: {e}");
            return exit::FAILURE;
        }
    }
    code
}

// ---------------------------------------------------------------------------
// Profiles

fn profile_equation(cfg: &ScenarioConfig, q: u32, speed: Option<f64>, grid: &PeriodicGrid) -> crate::Result<ProfileEquation> {
    let e = &cfg.equation;
    if e.normalized {
        ProfileEquation::normalized(q, e.r, e.m, e.gamma_tilde.unwrap_or_default(), grid)
    } else {
        let c = speed.ok_or_else(|| Error::invalid("a speed is required"))?;
        let mut p = e.params()?.with_speed(c);
        p.q = q;
        solitary::check_admissible(&p)?;
        ProfileEquation::new(&p, grid)
    }
}

fn default_centers(cfg: &ScenarioConfig) -> Vec<f64> {
    if cfg.scenario.centers.is_empty() {
        vec![0.0]
    } else {
        cfg.scenario.centers.clone()
    }
}

/// Solves for a profile and writes its trace; non-convergence is a failure
/// with code 3 after the trace is on disk.
fn solve(run: &mut Run<'_>, speed: Option<f64>, centers: &[f64], max_doublings: Option<u32>, tag: &str) -> Step<WaveProfile> {
    let cfg = run.cfg;
    let mut domain = cfg.grid.domain();
    if let Some(d) = max_doublings {
        domain.max_doublings = d;
    }
    let petv = cfg.solver.petviashvili();
    let res = run.timed(&format!("profile{tag}"), |_| {
        solitary::generate_profile(|g| profile_equation(cfg, cfg.equation.q, speed, g), centers, &domain, &petv)
    });
    let trace_name = format!("trace{tag}.csv");
    match res {
        Ok(p) => {
            run.out.write(&trace_name, io::trace_csv(&p.trace))?;
            run.out.write(&format!("trace{tag}.gp"), gp_trace(&trace_name))?;
            run.stat(
                &format!("profile{tag}"),
                json!({
                    "converged": p.converged,
                    "iterations": p.iterations,
                    "final_metric": p.final_metric,
                    "final_residual": p.final_residual,
                    "final_sfe": p.final_sfe,
                    "amplitude": p.amplitude(),
                    "l": p.field.grid().half_length(),
                    "N": p.field.grid().len(),
                }),
            );
            if !p.converged {
                return Err(Failure {
                    code: exit::NO_CONVERGENCE,
                    message: format!(
                        "profile did not converge in {} iterations (metric {:e})",
                        p.iterations, p.final_metric
                    ),
                    partial: true,
                });
            }
            Ok(p)
        }
        Err(Error::IterationDegenerate { trace }) => {
            run.out.write(&trace_name, io::trace_csv(&trace))?;
            Err(Failure {
                code: exit::NO_CONVERGENCE,
                message: format!("stabilizing factor degenerated after {} evaluations", trace.len()),
                partial: true,
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn write_profile(run: &mut Run<'_>, name: &str, file: &ProfileFile) -> Step<()> {
    run.out.write(name, file.to_text())?;
    Ok(())
}

fn cmd_generate(run: &mut Run<'_>) -> Step<()> {
    let cfg = run.cfg;
    let speed = cfg.scenario.speeds.first().copied();
    let centers = default_centers(cfg);
    let p = solve(run, speed, &centers, None, "")?;
    write_profile(run, "profile.txt", &ProfileFile::from_profile(&p))?;
    let phase = analysis::phase_plot_data(&p.field);
    run.out.write(
        "phase_plot.csv",
        io::series_csv("phase-plot", &["phi", "dphi"], phase.iter().map(|(a, b)| vec![*a, *b])),
    )?;
    run.out.write("profile.gp", gp_profile("profile.txt"))?;
    run.out.write("phase_plot.gp", gp_phase("phase_plot.csv"))?;
    let mut summary = json!({
        "amplitude": p.amplitude(),
        "iterations": p.iterations,
        "converged": p.converged,
        "final_residual": p.final_residual,
        "final_sfe": p.final_sfe,
        "tail_ratio": solitary::tail_ratio(&p.field),
        "phase_loop_gap": analysis::phase_loop_gap(&phase),
        "centers": centers,
    });
    if !p.normalized {
        summary["independent_residual"] = json!(solitary::profile_residual(&p.field, &p.params)?);
        summary["gamma_max"] = json!(solitary::gamma_max(&p.params)?);
    }
    run.out.write_json("generate.json", &summary)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Evolution

fn same_equation(a: &EquationParams, b: &EquationParams) -> bool {
    a.r == b.r && a.m == b.m && a.q == b.q && a.gamma == b.gamma && a.delta == b.delta
}

/// Initial profile for `evolve`: loaded from `scenario.profile` or generated.
fn initial_profile(run: &mut Run<'_>) -> Step<ProfileFile> {
    let cfg = run.cfg;
    let grid = cfg.grid.grid()?;
    if let Some(rel) = &cfg.scenario.profile {
        let path = run.config_dir.join(rel);
        let file = ProfileFile::read(&path).map_err(|e| Failure {
            code: exit::BAD_INPUT,
            message: format!("{}: {e}", path.display()),
            partial: false,
        })?;
        grid.check_same(file.grid())?;
        let want = cfg.equation.params()?;
        if file.normalized || !same_equation(&file.params, &want) {
            return Err(Error::invalid("profile file parameters differ from the [equation] section").into());
        }
        let mut file = file;
        if let Some(&c) = cfg.scenario.speeds.first() {
            file.params.speed = Some(c);
        }
        return Ok(file);
    }
    let p = solve(run, cfg.scenario.speeds.first().copied(), &default_centers(cfg), Some(0), "")?;
    Ok(ProfileFile::from_profile(&p))
}

fn record_outputs(run: &mut Run<'_>, rec: &SimulationRecord, c_s: Option<f64>, reference_amplitude: Option<f64>) -> Step<()> {
    run.out.write("record.csv", rec.to_csv())?;
    run.out.write("record.gp", gp_record("record.csv"))?;
    for (k, (t, u)) in rec.snapshots.iter().enumerate() {
        let file = ProfileFile {
            params: rec.params,
            normalized: false,
            time: Some(*t),
            field: u.clone(),
        };
        run.out.write(&format!("snapshots/snapshot_{k:04}.txt"), file.to_text())?;
    }
    let tracked: Vec<PulseRecord> = rec.pulses.iter().flatten().copied().collect();
    if let (Some(c), Some(a0)) = (c_s, reference_amplitude) {
        let (speed, phase) = analysis::speed_and_phase(&tracked, c, analysis::SPEED_WINDOW);
        let speed_at: BTreeMap<u64, f64> = speed.iter().map(|(t, v)| (t.to_bits(), *v)).collect();
        let rows = tracked.iter().zip(&phase).map(|(p, (_, ph))| {
            let sp = speed_at.get(&p.t.to_bits()).map(|v| v - c).unwrap_or(f64::NAN);
            vec![p.t, p.amplitude - a0, sp, *ph]
        });
        let csv = io::series_csv("errors", &["t", "amplitude_error", "speed_error", "phase_error"], rows);
        run.out.write("errors.csv", csv.replace("NaN", ""))?;
        run.out.write("errors.gp", gp_errors("errors.csv"))?;
    }
    let first = rec.invariants.first();
    let last = rec.invariants.last();
    let drift = |f: fn(&evolve::InvariantSample) -> f64| match (first, last) {
        (Some(a), Some(b)) => f(b) - f(a),
        _ => 0.0,
    };
    run.stat(
        "integration",
        json!({
            "steps": rec.steps,
            "samples": rec.times.len(),
            "t_final": rec.times.last().copied().unwrap_or(0.0),
            "shortened_last_step": rec.shortened_last_step,
            "substeps": rec.stats.substeps,
            "mean_sweeps": rec.stats.mean_sweeps(),
            "max_sweeps": rec.stats.max_sweeps,
            "momentum_drift": drift(|s| s.momentum),
            "energy_drift": drift(|s| s.energy),
            "mass_drift": drift(|s| s.mass),
        }),
    );
    Ok(())
}

/// Integrates and writes the record. On stage divergence the partial record
/// is written and the failure carries code 4.
fn integrate(
    run: &mut Run<'_>,
    u0: &SpectralField,
    p: &EquationParams,
    c_s: Option<f64>,
    observers: &mut [&mut dyn evolve::Observer],
) -> Step<SimulationRecord> {
    let stepper = run.cfg.stepper();
    let res = run.timed("integration", |_| evolve::integrate(u0, p, &stepper, observers));
    let a0 = analysis::track_pulse(u0, None).ok().map(|r| r.amplitude);
    match res {
        Ok(rec) => {
            record_outputs(run, &rec, c_s, a0)?;
            Ok(rec)
        }
        Err(fail) => {
            record_outputs(run, &fail.record, c_s, a0)?;
            Err(Failure {
                code: exit_code(&fail.error).max(exit::FAILURE),
                message: fail.to_string(),
                partial: true,
            })
        }
    }
}

fn cmd_evolve(run: &mut Run<'_>) -> Step<()> {
    let init = initial_profile(run)?;
    write_profile(run, "initial_profile.txt", &init)?;
    let c = init.params.speed;
    let rec = integrate(run, &init.field, &init.params, c, &mut [])?;
    let summary = json!({
        "initial_amplitude": init.field.max_abs(),
        "final_amplitude": rec.pulses.last().copied().flatten().map(|p| p.amplitude),
        "final_position": rec.pulses.last().copied().flatten().map(|p| p.position),
    });
    run.out.write_json("evolve.json", &summary)?;
    Ok(())
}

fn late_speed(rec: &SimulationRecord, t_min: f64) -> Option<f64> {
    let series: Vec<(f64, f64)> = rec
        .pulses
        .iter()
        .flatten()
        .filter_map(|p| p.speed_estimate.map(|v| (p.t, v)))
        .collect();
    analysis::late_time_mean(&series, t_min)
}

fn pulses_json(u: &SpectralField, threshold: f64, count: usize) -> Value {
    let list: Vec<Value> = analysis::find_pulses(u, threshold)
        .into_iter()
        .take(count)
        .map(|(x, a)| json!({"position": x, "amplitude": a}))
        .collect();
    Value::Array(list)
}

fn cmd_perturb(run: &mut Run<'_>) -> Step<()> {
    let cfg = run.cfg;
    let factor = cfg.scenario.factor.unwrap_or(1.0);
    let c = cfg.scenario.speeds[0];
    let prof = solve(run, Some(c), &default_centers(cfg), Some(0), "")?;
    write_profile(run, "profile.txt", &ProfileFile::from_profile(&prof))?;
    let u0 = prof.field.scaled(factor);
    let rec = integrate(run, &u0, &prof.params, Some(c), &mut [])?;
    let amps = rec.amplitudes();
    let summary = json!({
        "factor": factor,
        "profile_amplitude": prof.amplitude(),
        "initial_amplitude": factor * prof.amplitude(),
        "late_amplitude": analysis::late_time_mean(&amps, cfg.scenario.amplitude_from),
        "amplitude_from": cfg.scenario.amplitude_from,
        "late_speed": late_speed(&rec, cfg.scenario.speed_from),
        "speed_from": cfg.scenario.speed_from,
        "final_pulses": pulses_json(&rec.final_state, 0.1 * prof.amplitude(), 8),
        "final_minimum": rec.final_state.values().iter().copied().fold(f64::INFINITY, f64::min),
    });
    run.out.write_json("perturb.json", &summary)?;
    Ok(())
}

fn cmd_collide(run: &mut Run<'_>) -> Step<()> {
    let cfg = run.cfg;
    let s = &cfg.scenario;
    let grid = cfg.grid.grid()?;
    let base = cfg.equation.params()?;
    for &c in &s.speeds {
        solitary::check_admissible(&base.with_speed(c))?;
    }
    let mut u0 = SpectralField::zeros(&grid);
    let mut before = Vec::new();
    for (i, (&c, &x0)) in s.speeds.iter().zip(&s.centers).enumerate() {
        let p = solve(run, Some(c), &[0.0], Some(0), &format!("_{}", i + 1))?;
        write_profile(run, &format!("profile_{}.txt", i + 1), &ProfileFile::from_profile(&p))?;
        before.push(p.amplitude());
        u0 = u0.add(&p.field.translated(x0))?;
    }
    let k = s.speeds.len();
    let threshold = 0.25 * before.iter().copied().fold(f64::INFINITY, f64::min);
    let mut tracks: Vec<Vec<f64>> = Vec::new();
    let mut tracker = |t: f64, u: &SpectralField| -> crate::Result<()> {
        let mut found = analysis::find_pulses(u, threshold);
        found.truncate(k);
        let mut row = vec![t];
        for i in 0..k {
            let (x, a) = found.get(i).copied().unwrap_or((f64::NAN, f64::NAN));
            row.push(a);
            row.push(x);
        }
        tracks.push(row);
        Ok(())
    };
    let res = integrate(run, &u0, &base, None, &mut [&mut tracker]);
    let mut cols = vec!["t".to_string()];
    for i in 1..=k {
        cols.push(format!("amplitude_{i}"));
        cols.push(format!("position_{i}"));
    }
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let csv = io::series_csv("pulses", &col_refs, tracks.clone());
    run.out.write("pulses.csv", csv.replace("NaN", ""))?;
    run.out.write("pulses.gp", gp_pulses("pulses.csv", k))?;
    let rec = res?;

    // Pulses are matched by amplitude rank before and after.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| before[b].total_cmp(&before[a]));
    let after = analysis::find_pulses(&rec.final_state, threshold);
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        let (x, a) = after.get(rank).copied().unwrap_or((f64::NAN, f64::NAN));
        rows.push(vec![(i + 1) as f64, s.speeds[i], s.centers[i], before[i], a, x]);
        table.push(json!({
            "pulse": i + 1,
            "c_s": s.speeds[i],
            "center": s.centers[i],
            "amplitude_before": before[i],
            "amplitude_after": a.is_finite().then_some(a),
            "position_after": x.is_finite().then_some(x),
        }));
    }
    let csv = io::series_csv(
        "collision",
        &["pulse", "c_s", "center", "amplitude_before", "amplitude_after", "position_after"],
        rows,
    );
    run.out.write("collision.csv", csv.replace("NaN", ""))?;
    let tallest_speed = rec
        .pulses
        .iter()
        .rev()
        .flatten()
        .find_map(|p| p.speed_estimate);
    run.out.write_json(
        "collide.json",
        &json!({
            "pulses": table,
            "tallest_final_speed": tallest_speed,
            "other_maxima_after": after.iter().skip(k).take(8).map(|(x, a)| json!({"position": x, "amplitude": a})).collect::<Vec<_>>(),
        }),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Studies

/// Fit used by the decay study when none is configured: two exponentials
/// for integer `r`, otherwise a rational function of degree `2r + 1`.
pub fn default_decay_fit(r: f64) -> FitModel {
    if r.fract() == 0.0 {
        FitModel::Exp2
    } else {
        FitModel::Rational((2.0 * r + 1.0).round() as u32)
    }
}

pub fn fit_model(model: FitModel, xs: &[f64], ys: &[f64]) -> crate::Result<FitResult> {
    match model {
        FitModel::Power => analysis::fit_power(xs, ys),
        FitModel::Exp1 => analysis::fit_exp(xs, ys, 1),
        FitModel::Exp2 => analysis::fit_exp(xs, ys, 2),
        FitModel::Rational(d) => analysis::fit_rational(xs, ys, d),
    }
}

fn cmd_study(run: &mut Run<'_>) -> Step<()> {
    match run.cfg.scenario.study {
        Some(StudyKind::AmpVsSpeed) => study_amp_speed(run),
        Some(StudyKind::AmpVsQ) => study_amp_q(run),
        Some(StudyKind::Decay) => study_decay(run),
        None => Err(Error::invalid("missing study kind").into()),
    }
}

fn study_amp_speed(run: &mut Run<'_>) -> Step<()> {
    let cfg = run.cfg;
    let s = &cfg.scenario;
    if cfg.equation.normalized {
        return Err(Error::invalid("amp-vs-speed runs the physical equation").into());
    }
    let speeds = analysis::speed_range(s.c_min.unwrap_or(1.0), s.c_max.unwrap_or(1.0), s.c_stride.unwrap_or(1.0));
    let template = cfg.equation.params()?;
    let domain = cfg.grid.domain();
    let petv = cfg.solver.petviashvili();
    let study = run.timed("study", |_| analysis::amplitude_speed_study(&template, &speeds, &domain, &petv))?;
    for r in study.rows.iter().filter(|r| r.error.is_some()) {
        log::warn!("c_s = {}: {}", r.c_s, r.error.as_deref().unwrap_or(""));
    }
    run.out.write("amp_speed.csv", study.to_csv())?;
    run.out.write_json("amp_speed.json", &study)?;
    run.out.write("amp_speed.gp", gp_amp_speed("amp_speed.csv", study.fit.as_ref()))?;
    run.stat(
        "study",
        json!({
            "rows": study.rows.len(),
            "failed": study.rows.iter().filter(|r| r.amplitude.is_none()).count(),
            "alpha": study.fit.as_ref().map(|f| f.coefficients[1]),
        }),
    );
    Ok(())
}

fn study_amp_q(run: &mut Run<'_>) -> Step<()> {
    let cfg = run.cfg;
    let qs = cfg.scenario.q_values.clone();
    let speed = cfg.scenario.speeds.first().copied();
    let domain = cfg.grid.domain();
    let petv = cfg.solver.petviashvili();
    let results: Vec<(u32, crate::Result<WaveProfile>)> = run.timed("study", |_| {
        qs.par_iter()
            .map(|&q| {
                (
                    q,
                    solitary::generate_profile(|g| profile_equation(cfg, q, speed, g), &[0.0], &domain, &petv),
                )
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut report = Vec::new();
    for (q, res) in results {
        let gkdv = if cfg.equation.normalized {
            None
        } else {
            speed.map(|c| analysis::gkdv_amplitude(q, c))
        };
        match res {
            Ok(p) if p.converged => {
                rows.push(vec![q as f64, p.amplitude(), p.iterations as f64, gkdv.unwrap_or(f64::NAN)]);
                report.push(json!({"q": q, "amplitude": p.amplitude(), "iterations": p.iterations, "gkdv_amplitude": gkdv}));
            }
            Ok(p) => {
                log::warn!("q = {q}: no convergence (metric {:e})", p.final_metric);
                report.push(json!({"q": q, "error": "no convergence", "iterations": p.iterations}));
            }
            Err(e) => {
                log::warn!("q = {q}: {e}");
                report.push(json!({"q": q, "error": e.to_string()}));
            }
        }
    }
    let csv = io::series_csv("amp-vs-q", &["q", "amplitude", "iterations", "gkdv_amplitude"], rows);
    run.out.write("amp_q.csv", csv.replace("NaN", ""))?;
    run.out.write_json("amp_q.json", &report)?;
    run.out.write("amp_q.gp", gp_amp_q("amp_q.csv"))?;
    Ok(())
}

fn study_decay(run: &mut Run<'_>) -> Step<()> {
    let cfg = run.cfg;
    let speed = cfg.scenario.speeds.first().copied();
    let p = solve(run, speed, &[0.0], None, "")?;
    write_profile(run, "profile.txt", &ProfileFile::from_profile(&p))?;
    let phase = analysis::phase_plot_data(&p.field);
    run.out.write(
        "phase_plot.csv",
        io::series_csv("phase-plot", &["phi", "dphi"], phase.iter().map(|(a, b)| vec![*a, *b])),
    )?;
    let (c, delta) = if p.normalized { (1.0, 1.0) } else { (p.params.c_s()?, p.params.delta) };
    let decay_length = (delta / c).powf(0.5 / p.params.m as f64);
    let x_min = cfg
        .scenario
        .envelope_start
        .unwrap_or_else(|| analysis::default_envelope_start(&p.field, decay_length));
    let env = match cfg.scenario.envelope {
        EnvelopeKind::Maxima => analysis::envelope_extract(&p.field, x_min)?,
        EnvelopeKind::Curve => analysis::envelope_curve(&p.field, x_min)?,
    };
    let xs: Vec<f64> = env.iter().map(|e| e.0).collect();
    let ys: Vec<f64> = env.iter().map(|e| e.1).collect();
    let model = cfg.scenario.fit.unwrap_or_else(|| default_decay_fit(cfg.equation.r));
    let fit = run.timed("fit", |_| fit_model(model, &xs, &ys))?;
    let rows = env.iter().map(|(x, y)| vec![*x, *y, fit.eval(*x)]);
    run.out.write("envelope.csv", io::series_csv("envelope", &["x", "envelope", "fit"], rows))?;
    run.out.write_json(
        "fit.json",
        &json!({"envelope_start": x_min, "envelope": cfg.scenario.envelope, "fit": fit}),
    )?;
    run.out.write("envelope.gp", gp_envelope("envelope.csv"))?;
    run.stat("fit", json!({"model": model, "r_squared": fit.r_squared, "points": fit.n_points}));
    Ok(())
}

// ---------------------------------------------------------------------------
// Dispersion

fn cmd_dispersion(run: &mut Run<'_>) -> Step<()> {
    let cfg = run.cfg;
    let p = cfg.params_with_speed(0)?;
    let report = analysis::classify_dispersion(&p)?;
    run.out.write_json("dispersion.json", &report)?;
    let x_hi = 1.5 * report.roots.map(|r| r.1).unwrap_or(0.0).max(report.x_c).max(report.x_p).max(1e-3);
    let k_hi = x_hi.sqrt();
    let n = 400;
    let mut rows = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let k = k_hi * i as f64 / n as f64;
        rows.push(vec![
            k,
            analysis::phase_speed(k, &p)?,
            analysis::group_velocity(k, &p)?,
            analysis::radiation_function(k * k, &p)?,
        ]);
    }
    run.out.write(
        "dispersion.csv",
        io::series_csv("dispersion", &["kappa", "phase_speed", "group_velocity", "radiation_function"], rows),
    )?;
    run.out.write("dispersion.gp", gp_dispersion("dispersion.csv"))?;
    run.stat("regime", json!(report.regime));
    Ok(())
}

// ---------------------------------------------------------------------------
// gnuplot scripts

const GP_CSV: &str = "set datafile separator ','\nset datafile commentschars '#'\nset key autotitle columnhead\n";

fn gp_profile(file: &str) -> String {
    format!("set xlabel 'x'\nset ylabel 'phi'\nplot '{file}' using 1:2 every ::1 with lines notitle\npause -1\n")
}

fn gp_phase(file: &str) -> String {
    format!("{GP_CSV}set xlabel 'phi'\nset ylabel \"phi'\"\nplot '{file}' using 1:2 with lines\npause -1\n")
}

fn gp_trace(file: &str) -> String {
    format!(
        "{GP_CSV}set logscale y\nset xlabel 'iteration'\nplot '{file}' using 1:($3 eq \"true\" ? $4 : NaN) with linespoints title 'SFE', \
         '' using 1:($3 eq \"true\" ? $5 : NaN) with linespoints title 'RES'\npause -1\n"
    )
}

fn gp_record(file: &str) -> String {
    format!(
        "{GP_CSV}set xlabel 't'\nset multiplot layout 2,2\nplot '{file}' using 1:2 with lines\nplot '{file}' using 1:3 with lines\n\
         plot '{file}' using 1:5 with lines\nplot '{file}' using 1:7 with lines\nunset multiplot\npause -1\n"
    )
}

fn gp_errors(file: &str) -> String {
    format!(
        "{GP_CSV}set xlabel 't'\nset multiplot layout 3,1\nplot '{file}' using 1:2 with lines\nplot '{file}' using 1:3 with lines\n\
         plot '{file}' using 1:4 with lines\nunset multiplot\npause -1\n"
    )
}

fn gp_pulses(file: &str, k: usize) -> String {
    let curves: Vec<String> = (0..k).map(|i| format!("'{file}' using 1:{} with lines", 2 + 2 * i)).collect();
    format!("{GP_CSV}set xlabel 't'\nset ylabel 'amplitude'\nplot {}\npause -1\n", curves.join(", "))
}

fn gp_amp_speed(file: &str, fit: Option<&FitResult>) -> String {
    let mut s = format!("{GP_CSV}set xlabel 'c_s'\nset ylabel 'amplitude'\n");
    match fit {
        Some(f) => s.push_str(&format!(
            "K = {}\nalpha = {}\nplot '{file}' using 1:2 with points, K*x**alpha title 'fit'\n",
            fmt_f(f.coefficients[0]),
            fmt_f(f.coefficients[1])
        )),
        None => s.push_str(&format!("plot '{file}' using 1:2 with points\n")),
    }
    s.push_str("pause -1\n");
    s
}

fn gp_amp_q(file: &str) -> String {
    format!("{GP_CSV}set xlabel 'q'\nset ylabel 'amplitude'\nplot '{file}' using 1:2 with linespoints\npause -1\n")
}

fn gp_envelope(file: &str) -> String {
    format!(
        "{GP_CSV}set logscale y\nset xlabel 'x'\nplot '{file}' using 1:2 with points, '' using 1:3 with lines\npause -1\n"
    )
}

fn gp_dispersion(file: &str) -> String {
    format!(
        "{GP_CSV}set xlabel 'kappa'\nset xzeroaxis\nplot '{file}' using 1:2 with lines, '' using 1:3 with lines\npause -1\n"
    )
}
