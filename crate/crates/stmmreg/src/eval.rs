//! Synthetic scenes, noise and outlier injection, and the perturbation and
//! noise experiment protocols.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stmmreg_core::{
    average_resolution, perturb, register, rotation_error, sample_perturbation, translation_error,
    Initialization, Mode, PerturbationSpec, Point3, PointSet, RegistrationConfig, RigidTransform,
};

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Surface {
    Sphere,
    Torus,
    /// Height field over the unit disk with no continuous symmetry.
    WavyGrid,
}

impl Surface {
    pub fn as_str(&self) -> &'static str {
        match self {
            Surface::Sphere => "sphere",
            Surface::Torus => "torus",
            Surface::WavyGrid => "wavy-grid",
        }
    }
}

impl std::str::FromStr for Surface {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Surface::Sphere),
            "torus" => Ok(Surface::Torus),
            "wavy-grid" | "wavy_grid" | "wavy" => Ok(Surface::WavyGrid),
            other => Err(Error::Schema(format!("unknown surface `{other}`"))),
        }
    }
}

const TORUS_MAJOR: f64 = 1.0;
const TORUS_MINOR: f64 = 0.35;

fn wavy_height(x: f64, y: f64) -> f64 {
    0.3 * (6.0 * x + 0.4).sin() * (4.0 * y).cos() + 0.2 * (8.0 * (x + y)).sin()
}

/// How views draw their points from the surface.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Every view samples its own sector independently, as separate scans would.
    #[default]
    Independent,
    /// Views take runs of one common sample, so overlaps hold identical points.
    /// At full overlap every view is the same sample and ground truth has zero residual.
    Shared,
}

impl Sampling {
    pub fn as_str(&self) -> &'static str {
        match self {
            Sampling::Independent => "independent",
            Sampling::Shared => "shared",
        }
    }
}

impl std::str::FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(Sampling::Independent),
            "shared" => Ok(Sampling::Shared),
            other => Err(Error::Schema(format!("unknown sampling `{other}`"))),
        }
    }
}

/// Everything needed to regenerate a scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub surface: Surface,
    pub views: usize,
    pub points_per_view: usize,
    /// Fraction of a view's angular sector shared with each neighbour; 1 means every view sees the whole surface.
    pub overlap: f64,
    pub seed: u64,
    #[serde(default)]
    pub sampling: Sampling,
}

impl SceneSpec {
    pub fn new(
        surface: Surface,
        views: usize,
        points_per_view: usize,
        overlap: f64,
        seed: u64,
    ) -> Self {
        Self {
            surface,
            views,
            points_per_view,
            overlap,
            seed,
            sampling: Sampling::Independent,
        }
    }

    pub fn with_sampling(self, sampling: Sampling) -> Self {
        Self { sampling, ..self }
    }

    /// Size of the shared base sample; each view is a run of `points_per_view` of it.
    fn base_size(&self) -> Result<usize> {
        if self.views < 2 {
            return Err(Error::Schema("a scene needs at least 2 views".into()));
        }
        if self.points_per_view < 100 {
            return Err(Error::Schema(
                "a scene needs at least 100 points per view".into(),
            ));
        }
        if !(self.overlap > 0.3 && self.overlap <= 1.0) {
            return Err(Error::Schema("overlap must lie in (0.3, 1]".into()));
        }
        if self.overlap == 1.0 {
            return Ok(self.points_per_view);
        }
        let base = (self.points_per_view as f64 * self.views as f64 * (1.0 - self.overlap)).round()
            as usize;
        if base < self.points_per_view {
            return Err(Error::Schema(format!(
                "overlap {} is infeasible for {} views: each sector would exceed the full circle",
                self.overlap, self.views
            )));
        }
        Ok(base)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// Maps each view's points into the common frame.
    pub ground_truth: Vec<RigidTransform>,
    pub sets: Vec<PointSet>,
    pub resolution: f64,
    pub spec: Option<SceneSpec>,
}

impl SyntheticScene {
    pub fn from_parts(sets: Vec<PointSet>, ground_truth: Vec<RigidTransform>) -> Result<Self> {
        if sets.len() != ground_truth.len() {
            return Err(Error::Schema(format!(
                "{} views but {} ground-truth transforms",
                sets.len(),
                ground_truth.len()
            )));
        }
        let resolution = average_resolution(&sets)?;
        Ok(Self {
            ground_truth,
            sets,
            resolution,
            spec: None,
        })
    }
}

/// A uniform surface sample at azimuth `phi`, drawn as if `phi` were uniform.
fn sample_surface(surface: Surface, rng: &mut ChaCha8Rng, phi: f64) -> Point3 {
    match surface {
        Surface::Sphere => {
            let z: f64 = rng.gen_range(-1.0..1.0);
            let r = (1.0 - z * z).sqrt();
            Point3::new(r * phi.cos(), r * phi.sin(), z)
        }
        Surface::Torus => {
            // Area element is proportional to R + r cos(theta).
            let theta = loop {
                let theta = rng.gen_range(0.0..2.0 * PI);
                let accept =
                    (TORUS_MAJOR + TORUS_MINOR * theta.cos()) / (TORUS_MAJOR + TORUS_MINOR);
                if rng.gen::<f64>() < accept {
                    break theta;
                }
            };
            let ring = TORUS_MAJOR + TORUS_MINOR * theta.cos();
            Point3::new(
                ring * phi.cos(),
                ring * phi.sin(),
                TORUS_MINOR * theta.sin(),
            )
        }
        Surface::WavyGrid => {
            let r = rng.gen::<f64>().sqrt();
            let (x, y) = (r * phi.cos(), r * phi.sin());
            Point3::new(x, y, wavy_height(x, y))
        }
    }
}

fn azimuth(p: &Point3) -> f64 {
    p.y.atan2(p.x).rem_euclid(2.0 * PI)
}

fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = rng.gen_range(0.0..PI);
    let t = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    RigidTransform::from_axis_angle(Vector3::from(axis), angle, t)
}

/// Samples `views` overlapping azimuth sectors of the surface, sector `i`
/// centred on `2 pi i / views`, and moves each view into a local frame by the
/// inverse of its ground truth. View 0's ground truth is the identity.
///
/// With [`Sampling::Shared`] one azimuth-sorted base sample is drawn and view
/// `i` takes the run of `points_per_view` consecutive base points around its
/// centre, so overlapping views share identical points.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    let base_size = spec.base_size()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut ground_truth = vec![RigidTransform::identity()];
    for _ in 1..spec.views {
        ground_truth.push(random_transform(&mut rng));
    }
    let n = spec.points_per_view;
    let world: Vec<Vec<Point3>> = match spec.sampling {
        Sampling::Independent => {
            let width = 2.0 * PI * n as f64 / base_size as f64;
            (0..spec.views)
                .map(|i| {
                    let center = 2.0 * PI * i as f64 / spec.views as f64;
                    (0..n)
                        .map(|_| {
                            let phi = center + width * (rng.gen::<f64>() - 0.5);
                            sample_surface(spec.surface, &mut rng, phi)
                        })
                        .collect()
                })
                .collect()
        }
        Sampling::Shared => {
            let mut base: Vec<Point3> = (0..base_size)
                .map(|_| {
                    let phi = rng.gen_range(0.0..2.0 * PI);
                    sample_surface(spec.surface, &mut rng, phi)
                })
                .collect();
            base.sort_by(|a, b| azimuth(a).total_cmp(&azimuth(b)));
            (0..spec.views)
                .map(|i| {
                    let center = (i * base_size) as f64 / spec.views as f64;
                    let start = (center - n as f64 / 2.0).round() as i64;
                    (0..n as i64)
                        .map(|k| base[(start + k).rem_euclid(base_size as i64) as usize])
                        .collect()
                })
                .collect()
        }
    };
    let sets = world
        .into_iter()
        .zip(&ground_truth)
        .enumerate()
        .map(|(i, (points, gt))| {
            let to_local = gt.inverse();
            PointSet::new(i, points.iter().map(|p| to_local.apply(p)).collect())
        })
        .collect::<stmmreg_core::Result<Vec<_>>>()?;
    let mut scene = SyntheticScene::from_parts(sets, ground_truth)?;
    scene.spec = Some(*spec);
    Ok(scene)
}

/// Mean squared distance of the points from their centroid.
pub fn signal_power(set: &PointSet) -> f64 {
    let c = set.centroid();
    set.points
        .iter()
        .map(|p| (p - c).norm_squared())
        .sum::<f64>()
        / set.len() as f64
}

/// Adds zero-mean Gaussian noise to every coordinate, with per-coordinate
/// variance `signal_power / 10^(snr_db / 10)`.
pub fn add_noise_snr<R: Rng + ?Sized>(
    set: &PointSet,
    snr_db: f64,
    rng: &mut R,
) -> Result<PointSet> {
    if set.is_empty() {
        return Err(Error::Core(stmmreg_core::Error::EmptyPointSet {
            view: set.id,
        }));
    }
    let variance = signal_power(set) / 10f64.powf(snr_db / 10.0);
    let normal = Normal::new(0.0, variance.sqrt())
        .map_err(|_| Error::Schema(format!("invalid SNR {snr_db} dB")))?;
    let points = set
        .points
        .iter()
        .map(|p| {
            Point3::new(
                p.x + normal.sample(rng),
                p.y + normal.sample(rng),
                p.z + normal.sample(rng),
            )
        })
        .collect();
    Ok(PointSet::new(set.id, points)?)
}

/// Replaces `floor(fraction * N)` randomly chosen points with uniform samples
/// from the bounding box scaled 1.5x about its centre.
pub fn add_outliers<R: Rng + ?Sized>(
    set: &PointSet,
    fraction: f64,
    rng: &mut R,
) -> Result<PointSet> {
    if !(0.0..=0.5).contains(&fraction) {
        return Err(Error::Schema(
            "outlier fraction must lie in [0, 0.5]".into(),
        ));
    }
    let count = (fraction * set.len() as f64).floor() as usize;
    if count == 0 {
        return Ok(set.clone());
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in &set.points {
        lo = lo.inf(&p.coords);
        hi = hi.sup(&p.coords);
    }
    let center = (lo + hi) / 2.0;
    let half = (hi - lo) * 0.75;
    let mut points = set.points.clone();
    for i in rand::seq::index::sample(rng, set.len(), count) {
        let mut q = center;
        for k in 0..3 {
            if half[k] > 0.0 {
                q[k] += rng.gen_range(-half[k]..=half[k]);
            }
        }
        points[i] = Point3::from(q);
    }
    Ok(PointSet::new(set.id, points)?)
}

/// One row of the experiment grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentLevel {
    pub label: String,
    /// Its `seed` drives every trial of this level.
    pub perturbation: PerturbationSpec,
    pub snr_db: Option<f64>,
    pub outlier_fraction: f64,
}

/// Rotation half-widths crossed with a fixed translation half-width (in `d_r`).
/// Level `k` is seeded with `seed + k`.
pub fn robustness_levels(
    rotations: &[f64],
    translation: f64,
    seed: u64,
) -> Result<Vec<PerturbationSpec>> {
    rotations
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            Ok(PerturbationSpec::new(
                r,
                translation,
                seed.wrapping_add(k as u64),
            )?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    /// A noise-free control level always runs first.
    pub snr_db: Vec<f64>,
    pub outlier_fraction: f64,
    pub rotation_interval: f64,
    pub translation_interval: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub repeats: usize,
    pub modes: Vec<Mode>,
    /// Its `mode` is overridden per trial.
    pub registration: RegistrationConfig,
    /// Worker threads; `None` lets the pool decide.
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(repeats: usize, modes: Vec<Mode>, registration: RegistrationConfig) -> Self {
        Self {
            repeats,
            modes,
            registration,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub level: String,
    pub level_index: usize,
    pub rotation_interval: f64,
    pub snr_db: Option<f64>,
    pub mode: String,
    pub repeat: usize,
    pub e_r: Option<f64>,
    pub e_t: Option<f64>,
    pub iterations: usize,
    pub seconds: f64,
    /// `converged`, `max-iterations` or `failed`.
    pub status: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: String,
    pub level_index: usize,
    pub mode: String,
    pub trials: usize,
    pub failures: usize,
    pub e_r_mean: Option<f64>,
    pub e_r_std: Option<f64>,
    pub e_t_mean: Option<f64>,
    pub e_t_std: Option<f64>,
    pub iterations_mean: f64,
    pub seconds_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub protocol: String,
    pub resolution: f64,
    pub repeats: usize,
    pub trials: Vec<TrialRecord>,
    pub summaries: Vec<LevelSummary>,
}

/// Mean and sample standard deviation; `None` for an empty slice, std `0` for one value.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (Some(mean), Some(std))
}

/// Groups trials by `(level_index, mode)` in first-appearance order.
pub fn summarize(trials: &[TrialRecord]) -> Vec<LevelSummary> {
    let mut keys: Vec<(usize, String, String)> = Vec::new();
    for t in trials {
        let key = (t.level_index, t.mode.clone(), t.level.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(level_index, mode, level)| {
            let group: Vec<&TrialRecord> = trials
                .iter()
                .filter(|t| t.level_index == level_index && t.mode == mode)
                .collect();
            let e_r: Vec<f64> = group.iter().filter_map(|t| t.e_r).collect();
            let e_t: Vec<f64> = group.iter().filter_map(|t| t.e_t).collect();
            let (e_r_mean, e_r_std) = mean_std(&e_r);
            let (e_t_mean, e_t_std) = mean_std(&e_t);
            let n = group.len() as f64;
            LevelSummary {
                level,
                level_index,
                mode,
                trials: group.len(),
                failures: group.iter().filter(|t| t.error.is_some()).count(),
                e_r_mean,
                e_r_std,
                e_t_mean,
                e_t_std,
                iterations_mean: group.iter().map(|t| t.iterations as f64).sum::<f64>() / n,
                seconds_mean: group.iter().map(|t| t.seconds).sum::<f64>() / n,
            }
        })
        .collect()
}

impl ExperimentReport {
    pub fn summary(&self, level_index: usize, mode: Mode) -> Option<&LevelSummary> {
        self.summaries
            .iter()
            .find(|s| s.level_index == level_index && s.mode == mode.as_str())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,repeat,e_r_rad,e_t,iters,seconds,mode,status\n");
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.9e}")).unwrap_or_default();
        for t in &self.trials {
            out.push_str(&format!(
                "{},{},{},{},{},{:.6},{},{}\n",
                t.level,
                t.repeat,
                opt(t.e_r),
                opt(t.e_t),
                t.iterations,
                t.seconds,
                t.mode,
                t.status
            ));
        }
        out
    }

    /// Summaries plus the effective settings, without per-trial rows.
    pub fn summary_document(&self, settings: serde_json::Value) -> serde_json::Value {
        serde_json::json!({
            "protocol": self.protocol,
            "resolution": self.resolution,
            "repeats": self.repeats,
            "settings": settings,
            "summaries": self.summaries,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

/// RNG for one `(level, repeat)` cell; independent of scheduling.
pub fn trial_rng(level_seed: u64, repeat: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(level_seed);
    rng.set_stream(repeat as u64);
    rng
}

struct TrialData {
    sets: Vec<PointSet>,
    initial: Vec<RigidTransform>,
}

fn prepare_trial(
    scene: &SyntheticScene,
    level: &ExperimentLevel,
    repeat: usize,
    anchor: usize,
) -> Result<TrialData> {
    let mut rng = trial_rng(level.perturbation.seed, repeat);
    let mut sets = Vec::with_capacity(scene.sets.len());
    for set in &scene.sets {
        let mut s = match level.snr_db {
            Some(snr) => add_noise_snr(set, snr, &mut rng)?,
            None => set.clone(),
        };
        if level.outlier_fraction > 0.0 {
            s = add_outliers(&s, level.outlier_fraction, &mut rng)?;
        }
        sets.push(s);
    }
    let initial = scene
        .ground_truth
        .iter()
        .enumerate()
        .map(|(i, gt)| {
            if i == anchor {
                *gt
            } else {
                perturb(
                    gt,
                    &sample_perturbation(&level.perturbation, scene.resolution, &mut rng),
                )
            }
        })
        .collect();
    Ok(TrialData { sets, initial })
}

fn run_trial(
    scene: &SyntheticScene,
    data: &TrialData,
    config: &RegistrationConfig,
) -> (Option<f64>, Option<f64>, usize, String, Option<String>) {
    match register(
        &data.sets,
        Initialization::AutoSigma(data.initial.clone()),
        config,
    ) {
        Ok(report) => {
            let e_r = rotation_error(&report.transforms, &scene.ground_truth).ok();
            let e_t = translation_error(&report.transforms, &scene.ground_truth).ok();
            (
                e_r,
                e_t,
                report.iterations,
                report.termination.as_str().to_string(),
                None,
            )
        }
        Err(e) => (None, None, 0, "failed".to_string(), Some(e.to_string())),
    }
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Schema(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs every `(level, repeat)` cell once per mode. All modes of a cell see
/// identical data and initial transforms. Solver failures are recorded in the
/// trial, not returned.
pub fn run_experiment(
    protocol: &str,
    scene: &SyntheticScene,
    levels: &[ExperimentLevel],
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    if config.repeats == 0 {
        return Err(Error::Schema("repeats must be at least 1".into()));
    }
    if config.modes.is_empty() {
        return Err(Error::Schema("at least one solver mode is required".into()));
    }
    config.registration.validate()?;
    let anchor = config.registration.anchor_view;
    if anchor >= scene.sets.len() {
        return Err(Error::Schema("anchor view out of range".into()));
    }
    let cells: Vec<(usize, usize)> = (0..levels.len())
        .flat_map(|l| (0..config.repeats).map(move |r| (l, r)))
        .collect();
    let rows: Vec<Result<Vec<TrialRecord>>> = with_pool(config.threads, || {
        cells
            .par_iter()
            .map(|&(l, repeat)| {
                let level = &levels[l];
                let data = prepare_trial(scene, level, repeat, anchor)?;
                Ok(config
                    .modes
                    .iter()
                    .map(|&mode| {
                        let registration = RegistrationConfig {
                            mode,
                            ..config.registration
                        };
                        let start = Instant::now();
                        let (e_r, e_t, iterations, status, error) =
                            run_trial(scene, &data, &registration);
                        TrialRecord {
                            level: level.label.clone(),
                            level_index: l,
                            rotation_interval: level.perturbation.rotation_interval,
                            snr_db: level.snr_db,
                            mode: mode.as_str().to_string(),
                            repeat,
                            e_r,
                            e_t,
                            iterations,
                            seconds: start.elapsed().as_secs_f64(),
                            status,
                            error,
                        }
                    })
                    .collect())
            })
            .collect()
    })?;
    let mut trials = Vec::with_capacity(cells.len() * config.modes.len());
    for row in rows {
        trials.extend(row?);
    }
    // Level-major, then mode, then repeat.
    trials.sort_by_key(|t| {
        (
            t.level_index,
            config.modes.iter().position(|m| m.as_str() == t.mode),
            t.repeat,
        )
    });
    let summaries = summarize(&trials);
    Ok(ExperimentReport {
        protocol: protocol.to_string(),
        resolution: scene.resolution,
        repeats: config.repeats,
        trials,
        summaries,
    })
}

/// Perturbs every view but the anchor around ground truth at each level.
pub fn run_robustness_experiment(
    scene: &SyntheticScene,
    levels: &[PerturbationSpec],
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let levels: Vec<ExperimentLevel> = levels
        .iter()
        .map(|p| ExperimentLevel {
            label: format!("{}", p.rotation_interval),
            perturbation: *p,
            snr_db: None,
            outlier_fraction: 0.0,
        })
        .collect();
    run_experiment("robustness", scene, &levels, config)
}

/// A noise-free control level followed by one level per SNR, all with the
/// same perturbation intervals and outlier fraction.
pub fn run_noise_experiment(
    scene: &SyntheticScene,
    noise: &NoiseSpec,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let snrs = std::iter::once(None).chain(noise.snr_db.iter().map(|&s| Some(s)));
    let levels = snrs
        .enumerate()
        .map(|(k, snr_db)| {
            Ok(ExperimentLevel {
                label: snr_db.map_or_else(|| "none".to_string(), |s| format!("{s}")),
                perturbation: PerturbationSpec::new(
                    noise.rotation_interval,
                    noise.translation_interval,
                    noise.seed.wrapping_add(k as u64),
                )?,
                snr_db,
                outlier_fraction: noise.outlier_fraction,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    run_experiment("noise", scene, &levels, config)
}

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const MANIFEST_FILE: &str = "manifest.json";

fn view_file_name(i: usize, views: usize) -> String {
    let width = views.to_string().len().max(2);
    format!("view_{:0width$}.ply", i + 1)
}

/// Writes one binary PLY per view, the ground truth, and (for generated scenes) the manifest.
pub fn write_scene(scene: &SyntheticScene, dir: impl AsRef<Path>) -> Result<()> {
    write_scene_with_format(scene, dir, io::PlyFormat::BinaryLittleEndian)
}

pub fn write_scene_with_format(
    scene: &SyntheticScene,
    dir: impl AsRef<Path>,
    format: io::PlyFormat,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, set) in scene.sets.iter().enumerate() {
        io::write_ply(
            &set.points,
            dir.join(view_file_name(i, scene.sets.len())),
            format,
        )?;
    }
    io::write_transforms(&scene.ground_truth, dir.join(GROUND_TRUTH_FILE))?;
    if let Some(spec) = &scene.spec {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(spec).expect("manifest serializes") + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<SceneSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

/// PLY files of a directory in name order.
pub fn list_ply_files(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("ply"))
        {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads a scene directory: every `*.ply` in name order plus `ground_truth.json`.
/// Views larger than `downsample` points are randomly thinned (0 keeps all).
pub fn load_scene_dir(
    dir: impl AsRef<Path>,
    downsample: usize,
    seed: u64,
) -> Result<SyntheticScene> {
    let dir = dir.as_ref();
    let gt_path = dir.join(GROUND_TRUTH_FILE);
    if !gt_path.is_file() {
        return Err(Error::Schema(format!(
            "{} not found; evaluation needs ground-truth transforms (one entry per view, in file-name order)",
            gt_path.display()
        )));
    }
    let ground_truth = io::read_transforms(&gt_path)?;
    let files = list_ply_files(dir)?;
    let mut sets = Vec::with_capacity(files.len());
    for (i, path) in files.iter().enumerate() {
        let set = io::read_ply(path, i)?;
        sets.push(io::downsample(
            &set,
            downsample,
            seed.wrapping_add(i as u64),
        ));
    }
    let mut scene = SyntheticScene::from_parts(sets, ground_truth)?;
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.is_file() {
        scene.spec = read_manifest(&manifest).ok();
    }
    Ok(scene)
}
