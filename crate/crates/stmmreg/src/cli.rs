//! `stmmreg` command line.
//!
//! Exit codes: 0 success, 1 usage, I/O or schema error, 2 solver degeneracy.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;
use stmmreg_core::{
    average_resolution, Initialization, Mode, ModelParams, PointSet, Registration,
    RegistrationConfig, RigidTransform,
};

use crate::error::{Error, Result};
use crate::eval::{
    self, ExperimentConfig, ExperimentReport, NoiseSpec, Sampling, SceneSpec, Surface,
    SyntheticScene,
};
use crate::io;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_DEGENERATE: i32 = 2;

pub const DEFAULT_SEED: u64 = 20_210_101;
pub const DEFAULT_DOWNSAMPLE: usize = 2000;
pub const THREADS_ENV: &str = "STMMREG_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "stmmreg",
    version,
    about = "Multi-view rigid point set registration"
)]
pub struct Cli {
    /// Worker threads for experiments (falls back to STMMREG_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Jointly register two or more PLY point clouds.
    Register(RegisterArgs),
    /// Generate a synthetic multi-view scene with ground truth.
    Synth(SynthArgs),
    /// Run the perturbation or noise experiment on a scene.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    StudentT,
    Gaussian,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::StudentT => Mode::StudentT,
            ModeArg::Gaussian => Mode::Gaussian,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlyFormatArg {
    Ascii,
    Binary,
}

impl From<PlyFormatArg> for io::PlyFormat {
    fn from(f: PlyFormatArg) -> Self {
        match f {
            PlyFormatArg::Ascii => io::PlyFormat::Ascii,
            PlyFormatArg::Binary => io::PlyFormat::BinaryLittleEndian,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Solver mode.
    #[arg(long, value_enum, default_value = "student-t")]
    pub mode: ModeArg,
    /// Degrees of freedom of the t-distributions.
    #[arg(long, default_value_t = 3.0)]
    pub dof: f64,
    /// Maximum number of EM sweeps.
    #[arg(long, default_value_t = 300)]
    pub max_iters: usize,
    /// Convergence threshold on |dQ| / M.
    #[arg(long, default_value_t = 0.0005)]
    pub tol: f64,
    /// View held fixed (1-based).
    #[arg(long, default_value_t = 1)]
    pub anchor: usize,
    /// Re-index each view right after its own update instead of once per sweep.
    #[arg(long)]
    pub rebuild_per_view: bool,
    /// Use d * sum(P*) as the covariance denominator.
    #[arg(long)]
    pub symmetric_covariance: bool,
}

impl SolverArgs {
    fn config(&self) -> Result<RegistrationConfig> {
        if self.anchor == 0 {
            return Err(Error::Schema("--anchor is 1-based".into()));
        }
        let config = RegistrationConfig {
            dof: self.dof,
            max_iterations: self.max_iters,
            tolerance: self.tol,
            mode: self.mode.into(),
            anchor_view: self.anchor - 1,
            rebuild_per_view: self.rebuild_per_view,
            symmetric_covariance: self.symmetric_covariance,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RegisterArgs {
    /// Input PLY files, one per view.
    #[arg(required = true, num_args = 2..)]
    pub inputs: Vec<PathBuf>,
    /// Output transforms JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Initial transforms JSON (identity when omitted).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Randomly keep at most this many points per view (0 keeps all).
    #[arg(long, default_value_t = DEFAULT_DOWNSAMPLE)]
    pub downsample: usize,
    /// Write every full input cloud, aligned, into this directory.
    #[arg(long)]
    pub emit_aligned: Option<PathBuf>,
    /// PLY encoding of aligned clouds.
    #[arg(long, value_enum, default_value = "binary")]
    pub aligned_format: PlyFormatArg,
    /// Write the per-sweep Q trajectory as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Initial variance (defaults to the squared average point resolution).
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Seed for down-sampling.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Directory to write views, ground truth and manifest into.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Replay a manifest instead of the geometry flags.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_parser = parse_surface, default_value = "wavy-grid")]
    pub surface: Surface,
    #[arg(long, default_value_t = 10)]
    pub views: usize,
    /// Points per view.
    #[arg(long, default_value_t = 2000)]
    pub points: usize,
    /// Fraction of each view's sector shared with its neighbours, in (0.3, 1].
    #[arg(long, default_value_t = 0.6)]
    pub overlap: f64,
    #[arg(long, value_parser = parse_sampling, default_value = "independent")]
    pub sampling: Sampling,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// PLY encoding of the views.
    #[arg(long, value_enum, default_value = "binary")]
    pub format: PlyFormatArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Robustness,
    Noise,
}

impl Protocol {
    fn as_str(&self) -> &'static str {
        match self {
            Protocol::Robustness => "robustness",
            Protocol::Noise => "noise",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Scene directory: *.ply views plus ground_truth.json.
    #[arg(long, conflicts_with = "config")]
    pub scene: Option<PathBuf>,
    /// Experiment description as JSON; command-line flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub protocol: Option<Protocol>,
    /// Rotation half-widths in radians (robustness protocol).
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    /// Translation half-width in multiples of the point resolution.
    #[arg(long)]
    pub translation: Option<f64>,
    /// Rotation half-width in radians (noise protocol).
    #[arg(long)]
    pub rotation: Option<f64>,
    /// Noise levels in dB (noise protocol; a noise-free control always runs).
    #[arg(long, value_delimiter = ',')]
    pub snr: Option<Vec<f64>>,
    /// Fraction of points per view replaced by outliers (noise protocol).
    #[arg(long)]
    pub outliers: Option<f64>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Solver modes to compare.
    #[arg(long, value_delimiter = ',', value_enum)]
    pub modes: Option<Vec<ModeArg>>,
    /// Master seed for perturbations and noise.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Randomly keep at most this many points per view of a scene directory (0 keeps all).
    #[arg(long)]
    pub downsample: Option<usize>,
    #[arg(long)]
    pub dof: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// View held at ground truth and fixed (1-based).
    #[arg(long)]
    pub anchor: Option<usize>,
    /// Per-trial CSV output.
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    /// Summary JSON output.
    #[arg(long)]
    pub out_json: Option<PathBuf>,
}

/// Contents of an `eval --config` file. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalFile {
    /// Synthetic scene to generate.
    pub scene: Option<SceneSpec>,
    /// Scene directory, relative to the config file.
    pub scene_dir: Option<PathBuf>,
    pub protocol: Option<Protocol>,
    pub levels: Option<Vec<f64>>,
    pub translation: Option<f64>,
    pub rotation: Option<f64>,
    pub snr: Option<Vec<f64>>,
    pub outliers: Option<f64>,
    pub repeats: Option<usize>,
    pub modes: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub downsample: Option<usize>,
    pub dof: Option<f64>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub anchor: Option<usize>,
}

fn parse_surface(s: &str) -> std::result::Result<Surface, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_sampling(s: &str) -> std::result::Result<Sampling, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Core(
            stmmreg_core::Error::DegenerateView { .. }
            | stmmreg_core::Error::DegenerateGeometry(_)
            | stmmreg_core::Error::ZeroDenominator
            | stmmreg_core::Error::EmptyMixture,
        ) => EXIT_DEGENERATE,
        _ => EXIT_ERROR,
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let threads = resolve_threads(cli.threads)?;
    match &cli.command {
        Command::Register(args) => cmd_register(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Eval(args) => cmd_eval(args, threads),
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v.trim().parse().map(Some).map_err(|_| {
            Error::Schema(format!(
                "{THREADS_ENV} must be a non-negative integer, got `{v}`"
            ))
        }),
        _ => Ok(None),
    }
}

fn print_config(config: &RegistrationConfig) {
    println!("mode: {}", config.mode);
    println!("dof: {}", config.dof);
    println!("max_iterations: {}", config.max_iterations);
    println!("tolerance: {}", config.tolerance);
    println!("anchor_view: {}", config.anchor_view + 1);
    println!("rebuild_per_view: {}", config.rebuild_per_view);
    println!("symmetric_covariance: {}", config.symmetric_covariance);
}

pub fn cmd_register(args: &RegisterArgs) -> Result<()> {
    let config = args.solver.config()?;
    let full: Vec<PointSet> = args
        .inputs
        .iter()
        .enumerate()
        .map(|(i, path)| io::read_ply(path, i))
        .collect::<Result<_>>()?;
    let sets: Vec<PointSet> = full
        .iter()
        .enumerate()
        .map(|(i, s)| io::downsample(s, args.downsample, args.seed.wrapping_add(i as u64)))
        .collect();
    if config.anchor_view >= sets.len() {
        return Err(Error::Schema(format!(
            "--anchor {} exceeds the number of views ({})",
            config.anchor_view + 1,
            sets.len()
        )));
    }
    let initial: Vec<RigidTransform> = match &args.init {
        Some(path) => {
            let t = io::read_transforms(path)?;
            if t.len() != sets.len() {
                return Err(Error::Schema(format!(
                    "{}: {} transforms for {} views",
                    path.display(),
                    t.len(),
                    sets.len()
                )));
            }
            t
        }
        None => vec![RigidTransform::identity(); sets.len()],
    };
    let resolution = average_resolution(&sets)?;
    let init = match args.sigma2 {
        Some(s2) => Initialization::Params(ModelParams::new(initial, s2)?),
        None => Initialization::AutoSigma(initial),
    };

    println!("views: {}", sets.len());
    for (path, s) in args.inputs.iter().zip(&sets) {
        println!("input: {} ({} points used)", path.display(), s.len());
    }
    println!("downsample: {}", args.downsample);
    println!("seed: {}", args.seed);
    print_config(&config);
    println!("resolution: {resolution:.9e}");

    let registration = Registration::new(&sets, init, config)?;
    println!("initial_sigma2: {:.9e}", registration.params().sigma2);
    let report = registration.run()?;

    println!("iterations: {}", report.iterations);
    println!("final_sigma: {:.9e}", report.sigma2.sqrt());
    println!("termination: {}", report.termination.as_str());
    if report.floored_updates > 0 {
        println!("floored_covariance_updates: {}", report.floored_updates);
    }

    io::write_transforms(&report.transforms, &args.out)?;
    if let Some(path) = &args.trace {
        io::write_trace(&report.q_trajectory, path)?;
    }
    if let Some(dir) = &args.emit_aligned {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for ((path, set), t) in args.inputs.iter().zip(&full).zip(&report.transforms) {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("view");
            let out = dir.join(format!("{stem}_aligned.ply"));
            io::write_ply(&set.transformed(t).points, out, args.aligned_format.into())?;
        }
    }
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = match &args.manifest {
        Some(path) => eval::read_manifest(path)?,
        None => SceneSpec::new(
            args.surface,
            args.views,
            args.points,
            args.overlap,
            args.seed,
        )
        .with_sampling(args.sampling),
    };
    let scene = eval::generate_scene(&spec)?;
    eval::write_scene_with_format(&scene, &args.out_dir, args.format.into())?;
    println!("surface: {}", spec.surface.as_str());
    println!("views: {}", spec.views);
    println!("points_per_view: {}", spec.points_per_view);
    println!("overlap: {}", spec.overlap);
    println!("sampling: {}", spec.sampling.as_str());
    println!("seed: {}", spec.seed);
    println!("resolution: {:.9e}", scene.resolution);
    println!("written: {}", args.out_dir.display());
    Ok(())
}

fn parse_modes(names: &[String]) -> Result<Vec<Mode>> {
    names
        .iter()
        .map(|n| n.parse::<Mode>().map_err(Error::from))
        .collect()
}

fn load_eval_file(path: &Path) -> Result<EvalFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

pub fn cmd_eval(args: &EvalArgs, threads: Option<usize>) -> Result<()> {
    let file = match &args.config {
        Some(path) => load_eval_file(path)?,
        None => EvalFile::default(),
    };
    let protocol = args
        .protocol
        .or(file.protocol)
        .ok_or_else(|| Error::Schema("--protocol (robustness or noise) is required".into()))?;
    let seed = args.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let downsample = args
        .downsample
        .or(file.downsample)
        .unwrap_or(DEFAULT_DOWNSAMPLE);

    let scene: SyntheticScene = if let Some(dir) = &args.scene {
        eval::load_scene_dir(dir, downsample, seed)?
    } else if let Some(spec) = &file.scene {
        eval::generate_scene(spec)?
    } else if let Some(dir) = &file.scene_dir {
        let base = args
            .config
            .as_deref()
            .and_then(Path::parent)
            .unwrap_or(Path::new("."));
        eval::load_scene_dir(base.join(dir), downsample, seed)?
    } else {
        return Err(Error::Schema(
            "no scene given: pass --scene DIR (PLY views plus ground_truth.json, e.g. from `stmmreg synth`) or --config with a `scene` or `scene_dir` entry".into(),
        ));
    };

    let modes = match (&args.modes, &file.modes) {
        (Some(m), _) => m.iter().map(|&m| m.into()).collect(),
        (None, Some(names)) => parse_modes(names)?,
        (None, None) => vec![Mode::StudentT, Mode::Gaussian],
    };
    let anchor = args.anchor.or(file.anchor).unwrap_or(1);
    if anchor == 0 {
        return Err(Error::Schema("--anchor is 1-based".into()));
    }
    let defaults = RegistrationConfig::default();
    let registration = RegistrationConfig {
        dof: args.dof.or(file.dof).unwrap_or(defaults.dof),
        max_iterations: args
            .max_iters
            .or(file.max_iters)
            .unwrap_or(defaults.max_iterations),
        tolerance: args.tol.or(file.tol).unwrap_or(defaults.tolerance),
        anchor_view: anchor - 1,
        ..defaults
    };
    let translation = args.translation.or(file.translation).unwrap_or(1.0);
    let mut config = ExperimentConfig::new(0, modes, registration);
    config.threads = threads;

    let mut settings = json!({
        "protocol": protocol.as_str(),
        "views": scene.sets.len(),
        "points": scene.sets.iter().map(|s| s.len()).collect::<Vec<_>>(),
        "resolution": scene.resolution,
        "initial_sigma2": scene.resolution * scene.resolution,
        "seed": seed,
        "translation": translation,
        "modes": config.modes.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
        "dof": registration.dof,
        "max_iterations": registration.max_iterations,
        "tolerance": registration.tolerance,
        "anchor_view": anchor,
        "scene": scene.spec,
    });

    let report = match protocol {
        Protocol::Robustness => {
            config.repeats = args.repeats.or(file.repeats).unwrap_or(20);
            let levels = args
                .levels
                .clone()
                .or(file.levels)
                .unwrap_or_else(|| vec![0.01, 0.02, 0.03, 0.04, 0.05]);
            settings["levels"] = json!(levels);
            settings["repeats"] = json!(config.repeats);
            let levels = eval::robustness_levels(&levels, translation, seed)?;
            print_settings(&settings);
            eval::run_robustness_experiment(&scene, &levels, &config)?
        }
        Protocol::Noise => {
            config.repeats = args.repeats.or(file.repeats).unwrap_or(30);
            let noise = NoiseSpec {
                snr_db: args
                    .snr
                    .clone()
                    .or(file.snr)
                    .unwrap_or_else(|| vec![50.0, 25.0]),
                outlier_fraction: args.outliers.or(file.outliers).unwrap_or(0.0),
                rotation_interval: args.rotation.or(file.rotation).unwrap_or(0.02),
                translation_interval: translation,
                seed,
            };
            settings["snr_db"] = json!(noise.snr_db);
            settings["outlier_fraction"] = json!(noise.outlier_fraction);
            settings["rotation"] = json!(noise.rotation_interval);
            settings["repeats"] = json!(config.repeats);
            print_settings(&settings);
            eval::run_noise_experiment(&scene, &noise, &config)?
        }
    };

    print_summaries(&report);
    if let Some(path) = &args.out_csv {
        report.write_csv(path)?;
    }
    if let Some(path) = &args.out_json {
        let doc = report.summary_document(settings);
        let text = serde_json::to_string_pretty(&doc).expect("summary serializes") + "\n";
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn print_settings(settings: &serde_json::Value) {
    if let Some(map) = settings.as_object() {
        for (k, v) in map {
            println!("{k}: {v}");
        }
    }
}

fn print_summaries(report: &ExperimentReport) {
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4e}"));
    println!("level mode e_r_mean e_r_std e_t_mean e_t_std failures");
    for s in &report.summaries {
        println!(
            "{} {} {} {} {} {} {}/{}",
            s.level,
            s.mode,
            fmt(s.e_r_mean),
            fmt(s.e_r_std),
            fmt(s.e_t_mean),
            fmt(s.e_t_std),
            s.failures,
            s.trials
        );
    }
}
