//! The `hopf-mfi` command line.
//!
//! Settings are resolved as defaults, then an optional `key = value` config
//! file, then flags. Every output file starts with the resolved settings as
//! `# key = value` lines, and `hopf-mfi replay FILE` reruns a command from
//! that header.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::averaged::{self, AveragedError, AveragedPrediction};
use crate::density::{self, DensityError, GridSpec, SamplingProtocol};
use crate::extremal::{self, ExtremalError};
use crate::integrate::{IntegrateError, IntegratorConfig, Scheme};
use crate::model::{self, ModelError, ModelParams, PlanarState};
use crate::noise::{self, NoiseError, NoiseKind};
use crate::randomcycle::{self, CycleError};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage error (bad or missing flags)
  3  configuration error (unreadable config, unknown key, bad value)
  4  numerical or domain error (invalid parameters, divergence, no invariant band)
  5  I/O error
  6  convergence failure";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Domain(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("convergence: {0}")]
    Convergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Domain(_) => 4,
            CliError::Io { .. } => 5,
            CliError::Convergence(_) => 6,
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

macro_rules! domain_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Domain(e.to_string())
            }
        }
    )*};
}
domain_from!(ModelError, AveragedError, IntegrateError, NoiseError);

impl From<ExtremalError> for CliError {
    fn from(e: ExtremalError) -> Self {
        match e {
            ExtremalError::NoConvergence { .. } => CliError::Convergence(e.to_string()),
            e => CliError::Domain(e.to_string()),
        }
    }
}

impl From<CycleError> for CliError {
    fn from(e: CycleError) -> Self {
        match e {
            CycleError::NoConvergence { .. } => CliError::Convergence(e.to_string()),
            e => CliError::Domain(e.to_string()),
        }
    }
}

impl From<DensityError> for CliError {
    fn from(e: DensityError) -> Self {
        match e {
            DensityError::InvalidProtocol(_) | DensityError::InvalidGrid(_) => CliError::Config(e.to_string()),
            e => CliError::Domain(e.to_string()),
        }
    }
}

/// Every setting a command can depend on. The output directory and the
/// worker count are not part of it: they do not change results.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub epsilon: f64,
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
    pub lambda: Vec<f64>,
    /// Multiples of the bifurcation value, appended after `lambda`.
    pub lambda_mult: Vec<f64>,
    pub dt: f64,
    pub scheme: Scheme,
    pub seed: u64,
    pub starts: usize,
    pub burn_in: usize,
    pub record_steps: usize,
    pub thin: usize,
    pub grid: usize,
    pub extent: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_step: f64,
    pub theta_grid: usize,
    pub window_revs: usize,
    pub k_max: usize,
    /// Starting radius on `θ = 0` for the attraction check; the band's
    /// outer radius when absent.
    pub x0: Option<f64>,
    pub noise_kind: NoiseKind,
    pub n_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let proto = SamplingProtocol::desk(0);
        let integ = IntegratorConfig::default();
        Self {
            command: String::new(),
            epsilon: 0.1,
            sigma: 1.0,
            a: 1.0,
            b: 1.0,
            lambda: Vec::new(),
            lambda_mult: Vec::new(),
            dt: integ.dt,
            scheme: integ.scheme,
            seed: 0,
            starts: proto.n_starts,
            burn_in: proto.burn_in,
            record_steps: proto.record_steps,
            thin: proto.thin,
            grid: GridSpec::default().nx,
            extent: GridSpec::default().extent_factor,
            lambda_min: -0.1,
            lambda_max: 0.6,
            lambda_step: 1e-3,
            theta_grid: randomcycle::DEFAULT_GRID_SIZE,
            window_revs: 10,
            k_max: 200,
            x0: None,
            noise_kind: NoiseKind::ReflectedBrownian,
            n_steps: 10_000,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("{key} = {value}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "command" => self.command = value.to_string(),
            "epsilon" => self.epsilon = parse(key, value)?,
            "sigma" => self.sigma = parse(key, value)?,
            "a" => self.a = parse(key, value)?,
            "b" => self.b = parse(key, value)?,
            "lambda" => self.lambda = parse_list(key, value)?,
            "lambda_mult" => self.lambda_mult = parse_list(key, value)?,
            "dt" => self.dt = parse(key, value)?,
            "scheme" => self.scheme = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "starts" => self.starts = parse(key, value)?,
            "burn_in" => self.burn_in = parse(key, value)?,
            "record_steps" => self.record_steps = parse(key, value)?,
            "thin" => self.thin = parse(key, value)?,
            "grid" => self.grid = parse(key, value)?,
            "extent" => self.extent = parse(key, value)?,
            "lambda_min" => self.lambda_min = parse(key, value)?,
            "lambda_max" => self.lambda_max = parse(key, value)?,
            "lambda_step" => self.lambda_step = parse(key, value)?,
            "theta_grid" => self.theta_grid = parse(key, value)?,
            "window_revs" => self.window_revs = parse(key, value)?,
            "k_max" => self.k_max = parse(key, value)?,
            "x0" => self.x0 = if value.is_empty() { None } else { Some(parse(key, value)?) },
            "noise_kind" => self.noise_kind = parse(key, value)?,
            "n_steps" => self.n_steps = parse(key, value)?,
            other => return Err(CliError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Reads `key = value` lines; blank lines and lines starting with `#`
    /// are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("command", self.command.clone()),
            ("epsilon", self.epsilon.to_string()),
            ("sigma", self.sigma.to_string()),
            ("a", self.a.to_string()),
            ("b", self.b.to_string()),
            ("lambda", join(&self.lambda)),
            ("lambda_mult", join(&self.lambda_mult)),
            ("dt", self.dt.to_string()),
            ("scheme", self.scheme.to_string()),
            ("seed", self.seed.to_string()),
            ("starts", self.starts.to_string()),
            ("burn_in", self.burn_in.to_string()),
            ("record_steps", self.record_steps.to_string()),
            ("thin", self.thin.to_string()),
            ("grid", self.grid.to_string()),
            ("extent", self.extent.to_string()),
            ("lambda_min", self.lambda_min.to_string()),
            ("lambda_max", self.lambda_max.to_string()),
            ("lambda_step", self.lambda_step.to_string()),
            ("theta_grid", self.theta_grid.to_string()),
            ("window_revs", self.window_revs.to_string()),
            ("k_max", self.k_max.to_string()),
            ("x0", self.x0.map(|x| x.to_string()).unwrap_or_default()),
            ("noise_kind", self.noise_kind.to_string()),
            ("n_steps", self.n_steps.to_string()),
        ]
    }

    /// `# key = value` lines, prefixed by a tool/version line.
    pub fn provenance_header(&self) -> String {
        let mut out = format!("# hopf-mfi {}\n", env!("CARGO_PKG_VERSION"));
        for (k, v) in self.entries() {
            let _ = writeln!(out, "# {k} = {v}");
        }
        out
    }

    /// Reconstructs the settings from the header of an output file.
    pub fn from_provenance(bytes: &[u8]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut seen_command = false;
        for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
            if i == 0 && raw == b"P5" {
                continue;
            }
            let Some(rest) = raw.strip_prefix(b"# ") else {
                break;
            };
            let line = std::str::from_utf8(rest)
                .map_err(|_| CliError::Config(format!("header line {} is not UTF-8", i + 1)))?;
            if let Some((k, v)) = line.split_once(" = ") {
                cfg.set(k.trim(), v.trim())?;
                seen_command |= k.trim() == "command";
            }
        }
        if !seen_command {
            return Err(CliError::Config("no provenance header found".into()));
        }
        Ok(cfg)
    }

    pub fn params(&self, lambda: f64) -> Result<ModelParams, CliError> {
        Ok(ModelParams::new(lambda, self.epsilon, self.sigma, self.a, self.b)?)
    }

    /// Explicit `λ` values followed by the multiples of `λ_bif`.
    pub fn lambdas(&self) -> Result<Vec<f64>, CliError> {
        let mut out = self.lambda.clone();
        if !self.lambda_mult.is_empty() {
            let pred = AveragedPrediction::for_params(&self.params(0.0)?)
                .map_err(|e| CliError::Domain(format!("lambda_mult needs epsilon > 0: {e}")))?;
            out.extend(self.lambda_mult.iter().map(|m| m * pred.lambda_bif));
        }
        Ok(out)
    }

    fn single_lambda(&self) -> Result<f64, CliError> {
        match self.lambdas()?.as_slice() {
            [l] => Ok(*l),
            [] => Err(CliError::Config(format!("{} needs --lambda or --lambda-mult", self.command))),
            _ => Err(CliError::Config(format!("{} takes a single lambda", self.command))),
        }
    }

    fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig {
            dt: self.dt,
            scheme: self.scheme,
            burn_in_steps: self.burn_in,
            thin: self.thin,
        }
    }

    fn protocol(&self) -> SamplingProtocol {
        SamplingProtocol {
            n_starts: self.starts,
            burn_in: self.burn_in,
            record_steps: self.record_steps,
            thin: self.thin,
            seed_base: self.seed,
        }
    }
}

/// `n = max(1, round((max − min)/step))` points `min + k·step`.
pub fn lambda_range(min: f64, max: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(min.is_finite() && max.is_finite() && max >= min) {
        return Err(CliError::Config(format!("empty lambda range [{min}, {max}]")));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(CliError::Config(format!("lambda step must be > 0, got {step}")));
    }
    let n = (((max - min) / step).round() as usize).max(1);
    Ok((0..n).map(|k| min + k as f64 * step).collect())
}

#[derive(Debug, Parser)]
#[command(
    name = "hopf-mfi",
    version,
    about = "Minimal forward invariant sets, random cycles and invariant densities of the Hopf normal form with bounded noise",
    after_help = EXIT_CODES
)]
pub struct Cli {
    /// Size of the worker pool for parallel sweeps and ensembles.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory for output files.
    #[arg(long, global = true, env = "HOPF_MFI_OUT", default_value = ".")]
    out: PathBuf,
    /// Flat `key = value` settings file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form thresholds and boundary radii.
    Analyze {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Sweep of the averaged boundary radii and the equilibrium radius over λ.
    Diagram {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Extremal boundary orbits and MFI classification.
    Orbits {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Random fixed point, random cycle graph and attraction check.
    Cycle {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        cycle: CycleArgs,
    },
    /// Monte Carlo invariant density.
    Density {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        density: DensityArgs,
    },
    /// Writes one noise realization.
    NoiseDump {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Reruns the command recorded in an output file's header.
    Replay { file: PathBuf },
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, allow_negative_numbers = true)]
    epsilon: Option<f64>,
    /// One or more λ values, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    lambda: Option<Vec<f64>>,
    /// λ as multiples of the bifurcation value λ_bif.
    #[arg(long, value_delimiter = ',')]
    lambda_mult: Option<Vec<f64>>,
    /// Noise time scale.
    #[arg(long)]
    sigma: Option<f64>,
    /// Noise semi-axis along x.
    #[arg(long)]
    a: Option<f64>,
    /// Noise semi-axis along y.
    #[arg(long)]
    b: Option<f64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, allow_negative_numbers = true)]
    lambda_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    lambda_max: Option<f64>,
    #[arg(long)]
    lambda_step: Option<f64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    /// euler or ab2.
    #[arg(long)]
    scheme: Option<String>,
}

#[derive(Debug, Args)]
struct CycleArgs {
    #[arg(long)]
    theta_grid: Option<usize>,
    /// Pullback window in revolutions.
    #[arg(long)]
    window_revs: Option<usize>,
    /// Revolution budget for the random fixed point.
    #[arg(long)]
    k_max: Option<usize>,
    /// Start radius on θ = 0 for the attraction check.
    #[arg(long)]
    x0: Option<f64>,
}

#[derive(Debug, Args)]
struct DensityArgs {
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    record_steps: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Bins per axis.
    #[arg(long)]
    grid: Option<usize>,
    /// Grid half-width as a multiple of ρ+.
    #[arg(long)]
    extent: Option<f64>,
    /// Ten times the recorded steps: 10⁷ points with the default ensemble.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Debug, Args)]
struct NoiseArgs {
    /// reflected-brownian, frozen, extremal-upper or extremal-lower.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    n_steps: Option<usize>,
}

fn put<T: ToString>(cfg: &mut RunConfig, key: &str, v: &Option<T>) -> Result<(), CliError> {
    match v {
        Some(v) => cfg.set(key, &v.to_string()),
        None => Ok(()),
    }
}

impl ModelArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        put(cfg, "epsilon", &self.epsilon)?;
        put(cfg, "sigma", &self.sigma)?;
        put(cfg, "a", &self.a)?;
        put(cfg, "b", &self.b)?;
        if let Some(l) = &self.lambda {
            cfg.lambda = l.clone();
        }
        if let Some(m) = &self.lambda_mult {
            cfg.lambda_mult = m.clone();
        }
        Ok(())
    }
}

impl SweepArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        put(cfg, "lambda_min", &self.lambda_min)?;
        put(cfg, "lambda_max", &self.lambda_max)?;
        put(cfg, "lambda_step", &self.lambda_step)
    }
}

impl RunArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        put(cfg, "seed", &self.seed)?;
        put(cfg, "dt", &self.dt)?;
        put(cfg, "scheme", &self.scheme)
    }
}

impl CycleArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        put(cfg, "theta_grid", &self.theta_grid)?;
        put(cfg, "window_revs", &self.window_revs)?;
        put(cfg, "k_max", &self.k_max)?;
        put(cfg, "x0", &self.x0)
    }
}

impl DensityArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        put(cfg, "starts", &self.starts)?;
        put(cfg, "burn_in", &self.burn_in)?;
        put(cfg, "thin", &self.thin)?;
        put(cfg, "grid", &self.grid)?;
        put(cfg, "extent", &self.extent)?;
        if self.full_scale {
            cfg.record_steps = SamplingProtocol::full_scale(0).record_steps;
        }
        put(cfg, "record_steps", &self.record_steps)
    }
}

impl NoiseArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        put(cfg, "noise_kind", &self.kind)?;
        put(cfg, "n_steps", &self.n_steps)
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute_cli(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute_cli(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("workers: {e}")))?;
    }
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    match &cli.command {
        Command::Analyze { model } => {
            cfg.command = "analyze".into();
            model.apply(&mut cfg)?;
        }
        Command::Diagram { model, sweep } => {
            cfg.command = "diagram".into();
            model.apply(&mut cfg)?;
            sweep.apply(&mut cfg)?;
        }
        Command::Orbits { model } => {
            cfg.command = "orbits".into();
            model.apply(&mut cfg)?;
        }
        Command::Cycle { model, run, cycle } => {
            cfg.command = "cycle".into();
            model.apply(&mut cfg)?;
            run.apply(&mut cfg)?;
            cycle.apply(&mut cfg)?;
        }
        Command::Density { model, run, density } => {
            cfg.command = "density".into();
            model.apply(&mut cfg)?;
            run.apply(&mut cfg)?;
            density.apply(&mut cfg)?;
        }
        Command::NoiseDump { model, run, noise } => {
            cfg.command = "noise-dump".into();
            model.apply(&mut cfg)?;
            run.apply(&mut cfg)?;
            noise.apply(&mut cfg)?;
        }
        Command::Replay { file } => {
            let bytes = fs::read(file).map_err(|e| CliError::io(file, e))?;
            cfg = RunConfig::from_provenance(&bytes)?;
        }
    }
    execute(&cfg, &cli.out)
}

struct Output<'a> {
    dir: &'a Path,
    header: String,
}

impl Output<'_> {
    fn write_with<F>(&self, name: &str, body: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
    {
        let path = self.dir.join(name);
        let mut buf = self.header.clone().into_bytes();
        body(&mut buf).map_err(|e| CliError::io(&path, e))?;
        fs::write(&path, buf).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Runs the command named in `cfg` and writes its files into `out`.
pub fn execute(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let o = Output {
        dir: out,
        header: cfg.provenance_header(),
    };
    match cfg.command.as_str() {
        "analyze" => cmd_analyze(cfg, &o),
        "diagram" => cmd_diagram(cfg, &o),
        "orbits" => cmd_orbits(cfg, &o),
        "cycle" => cmd_cycle(cfg, &o),
        "density" => cmd_density(cfg, &o),
        "noise-dump" => cmd_noise_dump(cfg, &o),
        other => Err(CliError::Config(format!("unknown command `{other}`"))),
    }
}

fn cmd_analyze(cfg: &RunConfig, o: &Output) -> Result<(), CliError> {
    let base = cfg.params(0.0)?;
    let pred = AveragedPrediction::for_params(&base)?;
    println!("c = {}", pred.c);
    println!("lambda_bif = {}", pred.lambda_bif);
    println!("r_star = {}", pred.r_star);
    let lambdas = cfg.lambdas()?;
    let mut rows = Vec::new();
    for &l in &lambdas {
        let p = base.with_lambda(l);
        let radii = averaged::mfi_radii(l, pred.c)?;
        let r_s = model::equilibrium_radius(&p)?;
        println!(
            "lambda = {l} rho_plus = {} rho_minus = {} r_s = {r_s}",
            radii.rho_plus,
            opt(radii.rho_minus)
        );
        rows.push(format!(
            "{l},{},{},{},{},{},{r_s}",
            pred.c,
            pred.lambda_bif,
            pred.r_star,
            radii.rho_plus,
            opt(radii.rho_minus)
        ));
    }
    if rows.is_empty() {
        rows.push(format!(",{},{},{},,,", pred.c, pred.lambda_bif, pred.r_star));
    }
    o.write_with("analyze.csv", |w| {
        use io::Write;
        writeln!(w, "lambda,c,lambda_bif,r_star,rho_plus,rho_minus,r_s")?;
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    })?;
    Ok(())
}

fn cmd_diagram(cfg: &RunConfig, o: &Output) -> Result<(), CliError> {
    let base = cfg.params(0.0)?;
    let mut grid = lambda_range(cfg.lambda_min, cfg.lambda_max, cfg.lambda_step)?;
    insert_fold(&mut grid, &base)?;
    let rows = averaged::bifurcation_diagram(&base, &grid)?;
    if let Some(first) = rows.iter().find(|r| r.rho_minus.is_some()) {
        println!(
            "rho_minus branch born at lambda = {} height = {}",
            first.lambda,
            opt(first.rho_minus)
        );
    }
    o.write_with("diagram.csv", |w| {
        use io::Write;
        writeln!(w, "lambda,rho_plus,rho_minus,r_s")?;
        for r in &rows {
            writeln!(w, "{},{},{},{}", r.lambda, r.rho_plus, opt(r.rho_minus), r.r_s)?;
        }
        Ok(())
    })?;
    Ok(())
}

/// Adds `λ_bif` to a grid that brackets it, so the inner branch starts at
/// its birth point instead of the next grid value.
fn insert_fold(grid: &mut Vec<f64>, base: &ModelParams) -> Result<(), CliError> {
    if base.epsilon == 0.0 {
        return Ok(());
    }
    let l = AveragedPrediction::for_params(base)?.lambda_bif;
    if let Some(i) = grid.windows(2).position(|w| w[0] < l && l < w[1]) {
        grid.insert(i + 1, l);
    }
    Ok(())
}

fn cmd_orbits(cfg: &RunConfig, o: &Output) -> Result<(), CliError> {
    let lambdas = cfg.lambdas()?;
    if lambdas.is_empty() {
        return Err(CliError::Config("orbits needs --lambda or --lambda-mult".into()));
    }
    let rows = extremal::classify_sweep(&cfg.params(0.0)?, &lambdas)?;
    for d in &rows {
        println!(
            "lambda = {} shape = {} rho_minus = {} rho_plus = {}",
            d.lambda,
            d.shape,
            opt(d.inner.as_ref().map(|i| i.section_radius())),
            d.outer.section_radius()
        );
    }
    o.write_with("orbits.csv", |w| extremal::write_sweep_csv(&rows, w))?;
    o.write_with("orbits_profile.csv", |w| {
        use io::Write;
        writeln!(w, "lambda,side,theta,r")?;
        for d in &rows {
            for orbit in std::iter::once(&d.outer).chain(d.inner.as_ref()) {
                for (k, r) in orbit.radii.iter().enumerate() {
                    writeln!(w, "{},{},{},{r}", d.lambda, orbit.side, orbit.theta(k))?;
                }
            }
        }
        Ok(())
    })?;
    Ok(())
}

fn cmd_cycle(cfg: &RunConfig, o: &Output) -> Result<(), CliError> {
    let p = cfg.params(cfg.single_lambda()?)?;
    let band = randomcycle::band(&p)?;
    let per_rev = randomcycle::steps_per_revolution(cfg.dt);
    let revs = cfg.k_max.max(2 * cfg.window_revs);
    let path = noise::make_path(NoiseKind::ReflectedBrownian, cfg.sigma, cfg.dt, per_rev * revs, cfg.seed)?;
    let fp = randomcycle::pullback_fixed_point(&p, &path, &[band.r_minus, band.r_plus], cfg.k_max)?;
    let graph = randomcycle::graph_transform_cycle(&p, &path, cfg.theta_grid, cfg.window_revs)?;
    let x0 = PlanarState::new(cfg.x0.unwrap_or(band.r_plus), 0.0);
    let decay = randomcycle::attraction_check(&p, &path, x0, cfg.window_revs)?;
    println!("band = [{}, {}]", band.r_minus, band.r_plus);
    println!(
        "fixed_point = {} after {} revolutions (spread {})",
        fp.radius,
        fp.revolutions,
        fp.spreads.last().copied().unwrap_or(0.0)
    );
    println!("graph sup_change = {} converged = {}", graph.sup_change, graph.converged);
    println!(
        "attraction final_distance = {} below 1e-6 at revolution {}",
        decay.final_distance,
        decay.below_tol_at.map(|k| k.to_string()).unwrap_or_else(|| "none".into())
    );
    o.write_with("cycle_graph.csv", |w| graph.write_csv(w))?;
    o.write_with("cycle_spread.csv", |w| {
        use io::Write;
        writeln!(w, "revolution,spread")?;
        for (k, s) in fp.spreads.iter().enumerate() {
            writeln!(w, "{},{s}", k + 1)?;
        }
        Ok(())
    })?;
    o.write_with("cycle_decay.csv", |w| decay.write_csv(w))?;
    Ok(())
}

fn cmd_density(cfg: &RunConfig, o: &Output) -> Result<(), CliError> {
    let p = cfg.params(cfg.single_lambda()?)?;
    let grid_spec = GridSpec {
        nx: cfg.grid,
        ny: cfg.grid,
        extent_factor: cfg.extent,
    };
    let g = density::estimate_density(&p, &cfg.protocol(), &cfg.integrator(), &grid_spec)?;
    let mfi = extremal::classify_mfi(&p)?;
    let report = density::support_report(&g, &mfi)?;
    let profile = density::radial_marginal(&g, (cfg.grid / 4).max(1));
    println!("lambda = {} samples = {} outside_extent = {}", p.lambda, g.total, g.outside_extent);
    println!(
        "shape = {} outside_fraction = {} hole_fraction = {} peak_radius = {}",
        mfi.shape,
        report.outside_fraction,
        opt(report.hole_fraction),
        report.peak_radius
    );
    o.write_with("density.csv", |w| g.write_csv(w))?;
    let comments: Vec<String> = o.header.lines().map(|l| l.trim_start_matches("# ").to_string()).collect();
    let pgm_path = o.dir.join("density.pgm");
    let mut pgm = Vec::new();
    g.write_pgm(&mut pgm, &comments).map_err(|e| CliError::io(&pgm_path, e))?;
    fs::write(&pgm_path, pgm).map_err(|e| CliError::io(&pgm_path, e))?;
    o.write_with("density_radial.csv", |w| {
        use io::Write;
        writeln!(w, "r,density")?;
        for (r, d) in profile.centers().zip(&profile.density) {
            writeln!(w, "{r},{d}")?;
        }
        Ok(())
    })?;
    Ok(())
}

fn cmd_noise_dump(cfg: &RunConfig, o: &Output) -> Result<(), CliError> {
    let path = noise::make_path(cfg.noise_kind, cfg.sigma, cfg.dt, cfg.n_steps, cfg.seed)?;
    o.write_with("noise.csv", |w| path.write_csv(w))?;
    println!("{} samples of {} noise written", path.len(), cfg.noise_kind);
    Ok(())
}
