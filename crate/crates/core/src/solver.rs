//! Expectation-maximization over per-point Student's-t mixtures.
//!
//! Each point of view `i` is modelled as drawn from an equal-weight mixture
//! whose `M - 1` components are centred on its nearest neighbours in the other
//! views. A sweep runs the E-step for every view, solves one weighted rigid
//! alignment per non-anchor view in ascending order (each against the other
//! views at their current transforms), updates the shared `σ²` and evaluates
//! the expected complete-data log-likelihood `Q`.
//!
//! Floating-point reductions run sequentially in `(view, point, other view)`
//! order, so results are reproducible bit for bit.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointSet, RigidTransform};
use crate::spatial::KdIndex;
use crate::stmm::{
    self, ln_gamma, GaussianLogDensity, MixtureParams, PosteriorTriple, TLogDensity, DIM,
};

const D: f64 = DIM as f64;

/// σ² never drops below this multiple of the squared point resolution.
pub const SIGMA2_FLOOR_FACTOR: f64 = 1e-12;

/// Relative singular-value threshold below which the cross-covariance counts as rank deficient.
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Student's-t components with expected scale weights.
    #[default]
    StudentT,
    /// Gaussian components (`U ≡ 1`), the large-`v` limit.
    Gaussian,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::StudentT => "student-t",
            Mode::Gaussian => "gaussian",
        }
    }
}

impl core::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "student-t" | "student" | "t" => Ok(Mode::StudentT),
            "gaussian" | "gauss" => Ok(Mode::Gaussian),
            _ => Err(Error::InvalidParameter(
                "mode must be `student-t` or `gaussian`",
            )),
        }
    }
}

impl core::fmt::Display for Mode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    /// Degrees of freedom `v` of every component.
    pub dof: f64,
    /// Maximum number of sweeps `K`.
    pub max_iterations: usize,
    /// Stop once `(1/M) |Q_k - Q_{k-1}| < tolerance`.
    pub tolerance: f64,
    pub mode: Mode,
    /// Zero-based index of the view whose transform stays fixed.
    pub anchor_view: usize,
    /// Run E-step and M-step view by view, re-indexing each view right after it moves.
    pub rebuild_per_view: bool,
    /// Use `d Σ P*` instead of `d Σ P` as the covariance denominator.
    pub symmetric_covariance: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            dof: 3.0,
            max_iterations: 300,
            tolerance: 0.0005,
            mode: Mode::StudentT,
            anchor_view: 0,
            rebuild_per_view: false,
            symmetric_covariance: false,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dof > 0.0) {
            return Err(Error::InvalidParameter(
                "degrees of freedom must be positive",
            ));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidParameter("max_iterations must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be positive"));
        }
        Ok(())
    }
}

/// Current parameter set: one transform per view plus the shared `σ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub transforms: Vec<RigidTransform>,
    pub sigma2: f64,
}

impl ModelParams {
    pub fn new(transforms: Vec<RigidTransform>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidParameter(
                "sigma2 must be positive and finite",
            ));
        }
        Ok(Self { transforms, sigma2 })
    }
}

/// Starting point of a registration.
#[derive(Debug, Clone, PartialEq)]
pub enum Initialization {
    /// Transforms and `σ²` given explicitly.
    Params(ModelParams),
    /// Transforms given, `σ²` from the average point resolution.
    AutoSigma(Vec<RigidTransform>),
}

impl Initialization {
    /// Identity transforms with automatic `σ²`.
    pub fn identity(views: usize) -> Self {
        Initialization::AutoSigma(alloc::vec![RigidTransform::identity(); views])
    }
}

/// E-step output for one view: `others.len()` triples per point, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPosteriors {
    pub view: usize,
    /// Indices of the other views, ascending.
    pub others: Vec<usize>,
    pub triples: Vec<PosteriorTriple>,
    /// Squared Euclidean residual to each centroid; `Δ² = residual2 / σ²`.
    pub residual2: Vec<f64>,
}

impl ViewPosteriors {
    pub fn points(&self) -> usize {
        if self.others.is_empty() {
            0
        } else {
            self.triples.len() / self.others.len()
        }
    }

    pub fn row(&self, point: usize) -> &[PosteriorTriple] {
        let k = self.others.len();
        &self.triples[point * k..(point + 1) * k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EStepResult {
    pub views: Vec<ViewPosteriors>,
}

impl EStepResult {
    /// Recomputes cached residuals for the given transforms, keeping correspondences.
    pub fn refresh_residuals(&mut self, sets: &[PointSet], transforms: &[RigidTransform]) {
        for vp in &mut self.views {
            let i = vp.view;
            let k = vp.others.len();
            for (l, x) in sets[i].points.iter().enumerate() {
                let y = transforms[i].apply(x);
                for (jpos, &j) in vp.others.iter().enumerate() {
                    let c = vp.triples[l * k + jpos].correspondence;
                    let target = transforms[j].apply(&sets[j].points[c]);
                    vp.residual2[l * k + jpos] = (y - target).norm_squared();
                }
            }
        }
    }

    pub fn total_posterior(&self) -> f64 {
        let mut sum = 0.0;
        for vp in &self.views {
            for t in &vp.triples {
                sum += t.posterior;
            }
        }
        sum
    }
}

/// Mean over views of the mean nearest-neighbour spacing within each view.
pub fn average_resolution(sets: &[PointSet]) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::TooFewViews(0));
    }
    let mut total = 0.0;
    for (i, set) in sets.iter().enumerate() {
        if set.len() < 2 {
            return Err(Error::TooFewPoints {
                view: i,
                found: set.len(),
                required: 2,
            });
        }
        let index = KdIndex::from_points(i, &set.points)?;
        let mut sum = 0.0;
        for l in 0..set.len() {
            let nb = index.nearest_other(l).expect("set has at least two points");
            sum += libm::sqrt(nb.distance2);
        }
        total += sum / set.len() as f64;
    }
    Ok(total / sets.len() as f64)
}

/// Initial covariance `σ² = d_r²`.
pub fn initialize_sigma(sets: &[PointSet]) -> Result<f64> {
    let dr = average_resolution(sets)?;
    if !(dr > 0.0) {
        return Err(Error::DegenerateGeometry(
            "point resolution is zero: every view's points coincide",
        ));
    }
    Ok(dr * dr)
}

/// One k-d tree per view over its points at the given transforms.
pub fn build_indices(sets: &[PointSet], transforms: &[RigidTransform]) -> Result<Vec<KdIndex>> {
    if transforms.len() != sets.len() {
        return Err(Error::LengthMismatch {
            expected: sets.len(),
            found: transforms.len(),
        });
    }
    sets.iter()
        .zip(transforms)
        .enumerate()
        .map(|(i, (set, t))| view_index(i, set, t))
        .collect()
}

fn view_index(i: usize, set: &PointSet, transform: &RigidTransform) -> Result<KdIndex> {
    let moved: Vec<Point3> = set.points.iter().map(|p| transform.apply(p)).collect();
    KdIndex::from_points(i, &moved)
}

#[derive(Clone, Copy)]
enum Kernel {
    StudentT { density: TLogDensity, dof: f64 },
    Gaussian(GaussianLogDensity),
}

impl Kernel {
    fn new(sigma2: f64, config: &RegistrationConfig) -> Result<Self> {
        Ok(match config.mode {
            Mode::StudentT => {
                let params = MixtureParams::new(sigma2, config.dof)?;
                Kernel::StudentT {
                    density: TLogDensity::new(&params),
                    dof: config.dof,
                }
            }
            Mode::Gaussian => {
                if !(sigma2 > 0.0) {
                    return Err(Error::InvalidParameter("sigma2 must be positive"));
                }
                Kernel::Gaussian(GaussianLogDensity::new(sigma2))
            }
        })
    }

    #[inline]
    fn log_density(&self, delta2: f64) -> f64 {
        match self {
            Kernel::StudentT { density, .. } => density.eval(delta2),
            Kernel::Gaussian(g) => g.eval(delta2),
        }
    }

    #[inline]
    fn scale(&self, delta2: f64) -> f64 {
        match self {
            Kernel::StudentT { dof, .. } => (dof + D) / (dof + delta2),
            Kernel::Gaussian(_) => 1.0,
        }
    }
}

fn check_views(sets: &[PointSet], params: &ModelParams) -> Result<()> {
    if sets.len() < 2 {
        return Err(Error::TooFewViews(sets.len()));
    }
    if params.transforms.len() != sets.len() {
        return Err(Error::LengthMismatch {
            expected: sets.len(),
            found: params.transforms.len(),
        });
    }
    for (i, s) in sets.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::EmptyPointSet { view: i });
        }
    }
    Ok(())
}

/// E-step for view `i`: correspondences, posteriors, scale expectations and robust weights.
///
/// `indices[j]` must index view `j` at its current position; the centroid of
/// component `j` is the indexed position of the nearest neighbour.
fn e_step_view(
    i: usize,
    sets: &[PointSet],
    transform: &RigidTransform,
    indices: &[KdIndex],
    kernel: &Kernel,
    sigma2: f64,
    hints: Option<&ViewPosteriors>,
) -> ViewPosteriors {
    let others: Vec<usize> = (0..sets.len()).filter(|&j| j != i).collect();
    let k = others.len();
    let n = sets[i].len();
    let mut triples = Vec::with_capacity(n * k);
    let mut residual2 = Vec::with_capacity(n * k);
    let mut logs = alloc::vec![0.0; k];
    let mut delta2 = alloc::vec![0.0; k];

    for (l, x) in sets[i].points.iter().enumerate() {
        let y = transform.apply(x);
        let row_start = triples.len();
        for (jpos, &j) in others.iter().enumerate() {
            let hint = hints.map(|h| h.triples[l * k + jpos].correspondence);
            let nb = indices[j].nearest_with_hint(&y, hint);
            delta2[jpos] = nb.distance2 / sigma2;
            logs[jpos] = kernel.log_density(delta2[jpos]);
            residual2.push(nb.distance2);
            triples.push(PosteriorTriple {
                correspondence: nb.index,
                posterior: 0.0,
                scale_expectation: 0.0,
                robust_weight: 0.0,
            });
        }
        stmm::normalize_log_weights(&mut logs);
        for jpos in 0..k {
            let p = logs[jpos];
            let u = kernel.scale(delta2[jpos]);
            let t = &mut triples[row_start + jpos];
            t.posterior = p;
            t.scale_expectation = u;
            t.robust_weight = stmm::robust_posterior(p, u);
        }
    }

    ViewPosteriors {
        view: i,
        others,
        triples,
        residual2,
    }
}

/// Full E-step with the given parameters. `indices[j]` indexes view `j` at `params.transforms[j]`.
pub fn e_step(
    sets: &[PointSet],
    params: &ModelParams,
    indices: &[KdIndex],
    config: &RegistrationConfig,
) -> Result<EStepResult> {
    e_step_hinted(sets, params, indices, config, None)
}

fn e_step_hinted(
    sets: &[PointSet],
    params: &ModelParams,
    indices: &[KdIndex],
    config: &RegistrationConfig,
    hints: Option<&EStepResult>,
) -> Result<EStepResult> {
    check_views(sets, params)?;
    if indices.len() != sets.len() {
        return Err(Error::LengthMismatch {
            expected: sets.len(),
            found: indices.len(),
        });
    }
    let kernel = Kernel::new(params.sigma2, config)?;
    let views = (0..sets.len())
        .map(|i| {
            e_step_view(
                i,
                sets,
                &params.transforms[i],
                indices,
                &kernel,
                params.sigma2,
                hints.map(|h| &h.views[i]),
            )
        })
        .collect();
    Ok(EStepResult { views })
}

/// A source point, its target and a non-negative weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedPair {
    pub source: Point3,
    pub target: Point3,
    pub weight: f64,
}

/// Minimizes `Σ w ‖R s + t - y‖²` over proper rigid motions (weighted Kabsch).
pub fn m_step_transform(pairs: &[WeightedPair]) -> Result<RigidTransform> {
    if pairs
        .iter()
        .any(|p| !(p.weight >= 0.0) || !p.weight.is_finite())
    {
        return Err(Error::InvalidParameter(
            "pair weights must be finite and >= 0",
        ));
    }
    let effective = pairs.iter().filter(|p| p.weight > 0.0).count();
    if effective < 3 {
        return Err(Error::DegenerateGeometry(
            "fewer than 3 pairs with positive weight",
        ));
    }

    let mut total = 0.0;
    let mut src = Vector3::zeros();
    let mut dst = Vector3::zeros();
    for p in pairs {
        total += p.weight;
        src += p.source.coords * p.weight;
        dst += p.target.coords * p.weight;
    }
    let src_mean = src / total;
    let dst_mean = dst / total;

    let mut h = Matrix3::zeros();
    for p in pairs {
        if p.weight > 0.0 {
            h += (p.source.coords - src_mean) * (p.target.coords - dst_mean).transpose() * p.weight;
        }
    }

    let svd = h.svd(true, true);
    let s = svd.singular_values;
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::DegenerateGeometry("SVD failed"));
    };
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        s[b].partial_cmp(&s[a])
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    if !(s[order[0]] > 0.0) || s[order[1]] <= RANK_TOLERANCE * s[order[0]] {
        return Err(Error::DegenerateGeometry(
            "weighted cross-covariance has rank < 2",
        ));
    }

    let v = v_t.transpose();
    let mut correction = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        correction[(order[2], order[2])] = -1.0;
    }
    let rotation = v * correction * u.transpose();
    let translation = dst_mean - rotation * src_mean;
    Ok(RigidTransform::from_parts_unchecked(rotation, translation))
}

/// Weighted pairs for view `i`: original points against the other views' centroids at `transforms`.
pub fn view_pairs(
    i: usize,
    sets: &[PointSet],
    posteriors: &ViewPosteriors,
    transforms: &[RigidTransform],
) -> Vec<WeightedPair> {
    let k = posteriors.others.len();
    let mut pairs = Vec::with_capacity(sets[i].len() * k);
    for (l, x) in sets[i].points.iter().enumerate() {
        for (jpos, &j) in posteriors.others.iter().enumerate() {
            let t = &posteriors.triples[l * k + jpos];
            pairs.push(WeightedPair {
                source: *x,
                target: transforms[j].apply(&sets[j].points[t.correspondence]),
                weight: t.robust_weight,
            });
        }
    }
    pairs
}

/// `Σ_{l,j} P* ‖T_i x_{i,l} - T_j x_{j,c(j,l)}‖²` for view `i`, correspondences frozen.
pub fn view_objective(
    i: usize,
    sets: &[PointSet],
    posteriors: &ViewPosteriors,
    transforms: &[RigidTransform],
) -> f64 {
    view_pairs(i, sets, posteriors, transforms)
        .iter()
        .map(|p| p.weight * (transforms[i].apply(&p.source) - p.target).norm_squared())
        .sum()
}

fn covariance(
    estep: &EStepResult,
    sets: &[PointSet],
    params: &ModelParams,
    symmetric: bool,
) -> Result<f64> {
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for vp in &estep.views {
        let i = vp.view;
        let k = vp.others.len();
        for (l, x) in sets[i].points.iter().enumerate() {
            let y = params.transforms[i].apply(x);
            for (jpos, &j) in vp.others.iter().enumerate() {
                let t = &vp.triples[l * k + jpos];
                let target = params.transforms[j].apply(&sets[j].points[t.correspondence]);
                numerator += t.robust_weight * (y - target).norm_squared();
                denominator += if symmetric {
                    t.robust_weight
                } else {
                    t.posterior
                };
            }
        }
    }
    if !(denominator > 0.0) {
        return Err(Error::ZeroDenominator);
    }
    Ok(numerator / (D * denominator))
}

/// `σ² = Σ P* ‖x(Φ) - x_c‖² / (d Σ P)` at the transforms in `params`.
///
/// Returns the raw value, which is zero for a perfect alignment; [`register`]
/// floors it at [`SIGMA2_FLOOR_FACTOR`]` · d_r²`.
pub fn update_covariance(
    estep: &EStepResult,
    sets: &[PointSet],
    params: &ModelParams,
) -> Result<f64> {
    covariance(estep, sets, params, false)
}

/// Variant of [`update_covariance`] with denominator `d Σ P*`.
pub fn update_covariance_symmetric(
    estep: &EStepResult,
    sets: &[PointSet],
    params: &ModelParams,
) -> Result<f64> {
    covariance(estep, sets, params, true)
}

/// Expected complete-data log-likelihood from the frozen posteriors, the cached
/// residuals and `params.sigma2`.
pub fn q_value(estep: &EStepResult, params: &ModelParams, config: &RegistrationConfig) -> f64 {
    let sigma2 = params.sigma2;
    let log_2pi = libm::log(2.0 * PI);
    let log_sigma2 = libm::log(sigma2);
    let mut q = 0.0;
    match config.mode {
        Mode::StudentT => {
            let v = config.dof;
            let prior_const = v / 2.0 * libm::log(v / 2.0) - ln_gamma(v / 2.0);
            for vp in &estep.views {
                for (t, r2) in vp.triples.iter().zip(&vp.residual2) {
                    let u = t.scale_expectation;
                    let log_u = libm::log(u);
                    let delta2 = r2 / sigma2;
                    let scale_block = prior_const + v / 2.0 * (log_u - u) - log_u;
                    let data_block = -D / 2.0 * log_2pi - D / 2.0 * log_sigma2 + D / 2.0 * log_u
                        - 0.5 * u * delta2;
                    q += t.posterior * (scale_block + data_block);
                }
            }
        }
        Mode::Gaussian => {
            let norm = -D / 2.0 * (log_2pi + log_sigma2);
            for vp in &estep.views {
                for (t, r2) in vp.triples.iter().zip(&vp.residual2) {
                    q += t.posterior * (norm - 0.5 * r2 / sigma2);
                }
            }
        }
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max-iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationReport {
    pub transforms: Vec<RigidTransform>,
    pub sigma2: f64,
    pub initial_sigma2: f64,
    pub iterations: usize,
    /// `Q` after each sweep.
    pub q_trajectory: Vec<f64>,
    pub termination: Termination,
    /// Sweeps in which the covariance update hit the floor.
    pub floored_updates: usize,
}

/// Objective of one view's weighted alignment before and after its M-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStepRecord {
    pub sweep: usize,
    pub view: usize,
    pub objective_before: f64,
    pub objective_after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSummary {
    pub sweep: usize,
    pub q: f64,
    pub sigma2: f64,
    pub converged: bool,
}

/// Stateful EM loop; [`register`] drives it to termination.
#[derive(Debug, Clone)]
pub struct Registration<'a> {
    sets: &'a [PointSet],
    config: RegistrationConfig,
    params: ModelParams,
    initial_sigma2: f64,
    sigma2_floor: f64,
    last_estep: Option<EStepResult>,
    trajectory: Vec<f64>,
    floored: usize,
}

impl<'a> Registration<'a> {
    pub fn new(
        sets: &'a [PointSet],
        initial: Initialization,
        config: RegistrationConfig,
    ) -> Result<Self> {
        config.validate()?;
        if sets.len() < 2 {
            return Err(Error::TooFewViews(sets.len()));
        }
        if config.anchor_view >= sets.len() {
            return Err(Error::InvalidParameter("anchor view out of range"));
        }
        let resolution = average_resolution(sets).ok();
        let params = match initial {
            Initialization::Params(p) => p,
            Initialization::AutoSigma(transforms) => {
                ModelParams::new(transforms, initialize_sigma(sets)?)?
            }
        };
        check_views(sets, &params)?;
        if !(params.sigma2 > 0.0) {
            return Err(Error::InvalidParameter("sigma2 must be positive"));
        }
        let sigma2_floor = match resolution {
            Some(dr) if dr > 0.0 => SIGMA2_FLOOR_FACTOR * dr * dr,
            _ => SIGMA2_FLOOR_FACTOR * params.sigma2,
        };
        Ok(Self {
            sets,
            config,
            initial_sigma2: params.sigma2,
            params,
            sigma2_floor,
            last_estep: None,
            trajectory: Vec::new(),
            floored: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> &RegistrationConfig {
        &self.config
    }

    pub fn sigma2_floor(&self) -> f64 {
        self.sigma2_floor
    }

    pub fn iterations(&self) -> usize {
        self.trajectory.len()
    }

    /// E-step table of the most recent sweep, with residuals at the updated transforms.
    pub fn last_estep(&self) -> Option<&EStepResult> {
        self.last_estep.as_ref()
    }

    pub fn sweep(&mut self) -> Result<SweepSummary> {
        self.sweep_inner(None)
    }

    /// Runs a sweep and reports every M-step's objective before and after the update.
    pub fn sweep_observed(
        &mut self,
        observer: &mut dyn FnMut(&MStepRecord),
    ) -> Result<SweepSummary> {
        self.sweep_inner(Some(observer))
    }

    fn m_step_view(
        &mut self,
        sweep: usize,
        posteriors: &ViewPosteriors,
        observer: &mut Option<&mut dyn FnMut(&MStepRecord)>,
    ) -> Result<()> {
        let i = posteriors.view;
        let pairs = view_pairs(i, self.sets, posteriors, &self.params.transforms);
        let updated = m_step_transform(&pairs).map_err(|e| match e {
            Error::DegenerateGeometry(reason) => Error::DegenerateView { view: i, reason },
            other => other,
        })?;
        if let Some(obs) = observer.as_mut() {
            let before = view_objective(i, self.sets, posteriors, &self.params.transforms);
            let mut after_transforms = self.params.transforms.clone();
            after_transforms[i] = updated;
            let after = view_objective(i, self.sets, posteriors, &after_transforms);
            obs(&MStepRecord {
                sweep,
                view: i,
                objective_before: before,
                objective_after: after,
            });
        }
        self.params.transforms[i] = updated;
        Ok(())
    }

    fn sweep_inner(
        &mut self,
        mut observer: Option<&mut dyn FnMut(&MStepRecord)>,
    ) -> Result<SweepSummary> {
        let sweep = self.trajectory.len() + 1;
        let m = self.sets.len();
        let mut indices = build_indices(self.sets, &self.params.transforms)?;
        let kernel = Kernel::new(self.params.sigma2, &self.config)?;
        let hints = self.last_estep.take();

        let mut estep = if self.config.rebuild_per_view {
            let mut views = Vec::with_capacity(m);
            for i in 0..m {
                let vp = e_step_view(
                    i,
                    self.sets,
                    &self.params.transforms[i],
                    &indices,
                    &kernel,
                    self.params.sigma2,
                    hints.as_ref().map(|h| &h.views[i]),
                );
                if i != self.config.anchor_view {
                    self.m_step_view(sweep, &vp, &mut observer)?;
                    indices[i] = view_index(i, &self.sets[i], &self.params.transforms[i])?;
                }
                views.push(vp);
            }
            EStepResult { views }
        } else {
            let estep = e_step_hinted(
                self.sets,
                &self.params,
                &indices,
                &self.config,
                hints.as_ref(),
            )?;
            for vp in &estep.views {
                if vp.view != self.config.anchor_view {
                    self.m_step_view(sweep, vp, &mut observer)?;
                }
            }
            estep
        };

        let raw = covariance(
            &estep,
            self.sets,
            &self.params,
            self.config.symmetric_covariance,
        )?;
        if raw < self.sigma2_floor || !raw.is_finite() {
            self.floored += 1;
        }
        self.params.sigma2 = if raw.is_finite() {
            raw.max(self.sigma2_floor)
        } else {
            self.sigma2_floor
        };

        estep.refresh_residuals(self.sets, &self.params.transforms);
        let q = q_value(&estep, &self.params, &self.config);
        let converged = self
            .trajectory
            .last()
            .is_some_and(|prev| (q - prev).abs() / (m as f64) < self.config.tolerance);
        self.trajectory.push(q);
        self.last_estep = Some(estep);
        Ok(SweepSummary {
            sweep,
            q,
            sigma2: self.params.sigma2,
            converged,
        })
    }

    pub fn run(mut self) -> Result<RegistrationReport> {
        let termination = loop {
            if self.trajectory.len() >= self.config.max_iterations {
                break Termination::MaxIterations;
            }
            if self.sweep()?.converged {
                break Termination::Converged;
            }
        };
        Ok(self.into_report(termination))
    }

    fn into_report(self, termination: Termination) -> RegistrationReport {
        RegistrationReport {
            transforms: self.params.transforms,
            sigma2: self.params.sigma2,
            initial_sigma2: self.initial_sigma2,
            iterations: self.trajectory.len(),
            q_trajectory: self.trajectory,
            termination,
            floored_updates: self.floored,
        }
    }
}

/// Runs EM sweeps until `Q` settles or `max_iterations` sweeps have run.
pub fn register(
    sets: &[PointSet],
    initial: Initialization,
    config: &RegistrationConfig,
) -> Result<RegistrationReport> {
    Registration::new(sets, initial, *config)?.run()
}
