//! File formats: PLY point clouds, transform lists as JSON, `Q` traces as CSV.

mod ply;

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stmmreg_core::{nearest_rotation, rotation_deviation, PointSet, RigidTransform};

use crate::error::{Error, Result};

pub use ply::{encode_ply, parse_ply, read_ply, read_ply_cloud, write_ply, PlyCloud, PlyFormat};

/// Rotations further than this from orthonormal are rejected on load.
pub const ROTATION_REJECT_TOLERANCE: f64 = 1e-3;
/// Rotations within the reject tolerance but beyond this are projected onto SO(3).
pub const ROTATION_REPAIR_TOLERANCE: f64 = 1e-9;

/// One entry of a transforms file. `view` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformRecord {
    pub view: usize,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl TransformRecord {
    pub fn from_transform(view: usize, t: &RigidTransform) -> Self {
        let r = &t.rotation;
        Self {
            view,
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }

    /// Validates the rotation, repairing small drift.
    pub fn to_transform(&self) -> Result<RigidTransform> {
        let rows = &self.rotation;
        let rotation = Matrix3::new(
            rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0],
            rows[2][1], rows[2][2],
        );
        let translation = Vector3::from(self.translation);
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Schema(format!(
                "view {}: translation is not finite",
                self.view
            )));
        }
        if !rotation.iter().all(|v| v.is_finite()) || rotation.determinant() <= 0.0 {
            return Err(Error::Schema(format!(
                "view {}: rotation is not a proper rotation",
                self.view
            )));
        }
        let deviation = rotation_deviation(&rotation);
        if deviation > ROTATION_REJECT_TOLERANCE {
            return Err(Error::Schema(format!(
                "view {}: rotation deviates from orthonormal by {deviation:.3e}",
                self.view
            )));
        }
        let rotation = if deviation > ROTATION_REPAIR_TOLERANCE {
            nearest_rotation(&rotation)
        } else {
            rotation
        };
        Ok(RigidTransform::from_parts_unchecked(rotation, translation))
    }
}

/// Parses a transforms document into one transform per view, ordered by view.
/// Views must be exactly `1..=n`, in any order.
pub fn parse_transforms(text: &str) -> Result<Vec<RigidTransform>> {
    let records: Vec<TransformRecord> =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("transforms: {e}")))?;
    let n = records.len();
    let mut slots: Vec<Option<RigidTransform>> = vec![None; n];
    for record in &records {
        if record.view == 0 || record.view > n {
            return Err(Error::Schema(format!(
                "transforms: view {} out of range 1..={n}",
                record.view
            )));
        }
        let slot = &mut slots[record.view - 1];
        if slot.is_some() {
            return Err(Error::Schema(format!(
                "transforms: view {} listed twice",
                record.view
            )));
        }
        *slot = Some(record.to_transform()?);
    }
    Ok(slots.into_iter().flatten().collect())
}

pub fn read_transforms(path: impl AsRef<Path>) -> Result<Vec<RigidTransform>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_transforms(&text).map_err(|e| match e {
        Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn transforms_to_json(transforms: &[RigidTransform]) -> String {
    let records: Vec<TransformRecord> = transforms
        .iter()
        .enumerate()
        .map(|(i, t)| TransformRecord::from_transform(i + 1, t))
        .collect();
    let mut text = serde_json::to_string_pretty(&records).expect("transform records serialize");
    text.push('\n');
    text
}

pub fn write_transforms(transforms: &[RigidTransform], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, transforms_to_json(transforms)).map_err(|e| Error::io(path, e))
}

/// Writes `iteration,q` rows, iterations counted from 1.
pub fn write_trace(q_trajectory: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("iteration,q\n");
    for (k, q) in q_trajectory.iter().enumerate() {
        out.push_str(&format!("{},{:.17e}\n", k + 1, q));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Keeps `target` points chosen uniformly without replacement, in their
/// original order. Sets already at or below `target` are returned unchanged.
pub fn downsample(set: &PointSet, target: usize, seed: u64) -> PointSet {
    if target == 0 || set.len() <= target {
        return set.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = rand::seq::index::sample(&mut rng, set.len(), target).into_vec();
    keep.sort_unstable();
    PointSet {
        id: set.id,
        points: keep.into_iter().map(|i| set.points[i]).collect(),
    }
}
