//! Rigid transforms, registration error metrics and perturbation sampling.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

/// Tolerance for the orthonormality and determinant invariants of a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// A rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, checking the rotation invariants at [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let deviation = rotation_deviation(&rotation);
        if deviation > ROTATION_TOLERANCE || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NotARotation { deviation });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Builds a transform without validating the rotation.
    pub fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation by `angle` radians about `axis` (need not be normalized), then translation.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if axis.norm() == 0.0 {
            Matrix3::identity()
        } else {
            *Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).matrix()
        };
        Self {
            rotation,
            translation,
        }
    }

    /// Intrinsic XYZ Euler angles: `R = Rx(a) * Ry(b) * Rz(c)`.
    pub fn from_euler_xyz(a: f64, b: f64, c: f64, translation: Vector3<f64>) -> Self {
        let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), a);
        let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), b);
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), c);
        Self {
            rotation: *(rx * ry * rz).matrix(),
            translation,
        }
    }

    #[inline]
    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// `self ∘ inner`: applies `inner` first.
    pub fn compose(&self, inner: &RigidTransform) -> RigidTransform {
        let composed = RigidTransform {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        };
        if rotation_deviation(&composed.rotation) > ROTATION_TOLERANCE {
            composed.orthonormalized()
        } else {
            composed
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Angle of the rotation part in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle_of(&self.rotation)
    }

    pub fn is_valid(&self) -> bool {
        rotation_deviation(&self.rotation) <= ROTATION_TOLERANCE
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// Projects the rotation onto SO(3) by polar decomposition.
    pub fn orthonormalized(&self) -> RigidTransform {
        RigidTransform {
            rotation: nearest_rotation(&self.rotation),
            translation: self.translation,
        }
    }
}

/// Largest entry-wise deviation of `R^T R` from identity, or of `det R` from one.
pub fn rotation_deviation(rotation: &Matrix3<f64>) -> f64 {
    if !rotation.iter().all(|v| v.is_finite()) {
        return f64::INFINITY;
    }
    let gram = rotation.transpose() * rotation - Matrix3::identity();
    let ortho = gram.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    ortho.max((rotation.determinant() - 1.0).abs())
}

/// Closest proper rotation in the Frobenius sense (`U diag(1,1,±1) V^T`).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Matrix3::identity();
    };
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// `acos((tr R - 1) / 2)`, evaluated as `atan2(2 sin θ, 2 cos θ)` so that
/// angles near zero keep full precision.
fn rotation_angle_of(r: &Matrix3<f64>) -> f64 {
    let axis = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    libm::atan2(axis.norm(), r.trace() - 1.0)
}

pub fn apply_transform(transform: &RigidTransform, p: &Point3) -> Point3 {
    transform.apply(p)
}

pub fn compose(outer: &RigidTransform, inner: &RigidTransform) -> RigidTransform {
    outer.compose(inner)
}

fn check_lengths(estimated: &[RigidTransform], ground_truth: &[RigidTransform]) -> Result<()> {
    if estimated.len() != ground_truth.len() {
        return Err(Error::LengthMismatch {
            expected: ground_truth.len(),
            found: estimated.len(),
        });
    }
    if estimated.is_empty() {
        return Err(Error::InvalidParameter(
            "error metrics need at least one transform",
        ));
    }
    Ok(())
}

/// Mean angular error `(1/M) Σ acos((tr(R_m R_g^T) - 1) / 2)`.
pub fn rotation_error(
    estimated: &[RigidTransform],
    ground_truth: &[RigidTransform],
) -> Result<f64> {
    check_lengths(estimated, ground_truth)?;
    let total: f64 = estimated
        .iter()
        .zip(ground_truth)
        .map(|(m, g)| rotation_angle_of(&(m.rotation * g.rotation.transpose())))
        .sum();
    Ok(total / estimated.len() as f64)
}

/// Mean Euclidean distance between translations.
pub fn translation_error(
    estimated: &[RigidTransform],
    ground_truth: &[RigidTransform],
) -> Result<f64> {
    check_lengths(estimated, ground_truth)?;
    let total: f64 = estimated
        .iter()
        .zip(ground_truth)
        .map(|(m, g)| (m.translation - g.translation).norm())
        .sum();
    Ok(total / estimated.len() as f64)
}

/// An ordered, non-empty list of points belonging to one view.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub id: usize,
    pub points: Vec<Point3>,
}

impl PointSet {
    pub fn new(id: usize, points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyPointSet { view: id });
        }
        if !points
            .iter()
            .all(|p| p.coords.iter().all(|v| v.is_finite()))
        {
            return Err(Error::InvalidParameter("point coordinates must be finite"));
        }
        Ok(Self { id, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, transform: &RigidTransform) -> PointSet {
        PointSet {
            id: self.id,
            points: self.points.iter().map(|p| transform.apply(p)).collect(),
        }
    }

    pub fn centroid(&self) -> Point3 {
        let sum = self
            .points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Point3::from(sum / self.points.len() as f64)
    }
}

/// Uniform perturbation intervals used by the robustness protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    /// Half-width of each Euler angle interval, radians.
    pub rotation_interval: f64,
    /// Half-width of each translation component interval, in multiples of the point resolution.
    pub translation_interval: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(rotation_interval: f64, translation_interval: f64, seed: u64) -> Result<Self> {
        if !(rotation_interval >= 0.0) || !(translation_interval >= 0.0) {
            return Err(Error::InvalidParameter(
                "perturbation half-widths must be >= 0",
            ));
        }
        Ok(Self {
            rotation_interval,
            translation_interval,
            seed,
        })
    }
}

fn symmetric_uniform<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    if half_width == 0.0 {
        0.0
    } else {
        rng.gen_range(-half_width..=half_width)
    }
}

/// Draws `ΔR` from three uniform Euler angles and `Δt` from uniform components
/// scaled by `resolution`.
pub fn sample_perturbation<R: Rng + ?Sized>(
    spec: &PerturbationSpec,
    resolution: f64,
    rng: &mut R,
) -> RigidTransform {
    let a = symmetric_uniform(rng, spec.rotation_interval);
    let b = symmetric_uniform(rng, spec.rotation_interval);
    let c = symmetric_uniform(rng, spec.rotation_interval);
    let half = spec.translation_interval * resolution;
    let t = Vector3::new(
        symmetric_uniform(rng, half),
        symmetric_uniform(rng, half),
        symmetric_uniform(rng, half),
    );
    RigidTransform::from_euler_xyz(a, b, c, t)
}

/// Initial guess `R0 = ΔR R`, `t0 = Δt + t`.
pub fn perturb(ground_truth: &RigidTransform, delta: &RigidTransform) -> RigidTransform {
    RigidTransform {
        rotation: delta.rotation * ground_truth.rotation,
        translation: delta.translation + ground_truth.translation,
    }
}
