//! Exact 1-NN search over a static 3D point set.
//!
//! The tree is stored implicitly in a permutation of point indices: a range
//! `lo..hi` longer than [`LEAF_SIZE`] is split at `mid = (lo + hi) / 2`, the
//! point at `perm[mid]` is the node and `axes[mid]` its split axis. Splits use
//! the axis of widest spread and order points by `(coordinate, index)`, so the
//! layout is a pure function of the input.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointSet};

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
pub struct KdIndex {
    source_view: usize,
    coords: Vec<[f64; 3]>,
    perm: Vec<u32>,
    /// `coords` in tree order: `ordered[k] == coords[perm[k]]`.
    ordered: Vec<[f64; 3]>,
    /// Bounding box of every range `lo..hi` visited by the search, stored at
    /// its split position (internal ranges) or at `lo` (leaves).
    boxes: Vec<[[f64; 3]; 2]>,
    axes: Vec<u8>,
}

/// Result of a nearest-neighbour query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance2: f64,
}

impl Neighbor {
    #[inline]
    fn improves_on(&self, best: &Neighbor) -> bool {
        self.distance2 < best.distance2
            || (self.distance2 == best.distance2 && self.index < best.index)
    }
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl KdIndex {
    pub fn build(set: &PointSet) -> Result<Self> {
        Self::from_points(set.id, &set.points)
    }

    pub fn from_points(source_view: usize, points: &[Point3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyPointSet { view: source_view });
        }
        if points.len() > u32::MAX as usize {
            return Err(Error::InvalidParameter("point set too large to index"));
        }
        let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut perm: Vec<u32> = (0..points.len() as u32).collect();
        let mut axes = alloc::vec![0u8; points.len()];
        split(&coords, &mut perm, &mut axes, 0);
        let ordered: Vec<[f64; 3]> = perm.iter().map(|&i| coords[i as usize]).collect();
        let mut boxes = alloc::vec![[[0.0; 3]; 2]; points.len()];
        fill_boxes(&ordered, &mut boxes, 0, points.len());
        Ok(Self {
            source_view,
            coords,
            perm,
            ordered,
            boxes,
            axes,
        })
    }

    pub fn source_view(&self) -> usize {
        self.source_view
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Number of levels, counting a leaf bucket as one level.
    pub fn depth(&self) -> usize {
        fn levels(len: usize) -> usize {
            if len <= LEAF_SIZE {
                1
            } else {
                let mid = len / 2;
                1 + levels(mid).max(levels(len - mid - 1))
            }
        }
        levels(self.len())
    }

    /// Point indices in tree order; each index appears exactly once.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.perm.iter().map(|&i| i as usize)
    }

    pub fn point(&self, index: usize) -> Point3 {
        let c = self.coords[index];
        Point3::new(c[0], c[1], c[2])
    }

    /// Exact nearest neighbour; ties go to the smallest point index.
    pub fn nearest(&self, query: &Point3) -> Neighbor {
        self.nearest_with_hint(query, None)
    }

    /// As [`nearest`](Self::nearest), seeding the search bound with a candidate
    /// (for example the previous correspondence). The result does not depend on the hint.
    pub fn nearest_with_hint(&self, query: &Point3, hint: Option<usize>) -> Neighbor {
        let q = [query.x, query.y, query.z];
        let start = hint
            .filter(|&h| h < self.len())
            .unwrap_or(self.perm[self.len() / 2] as usize);
        let mut best = Neighbor {
            index: start,
            distance2: dist2(&q, &self.coords[start]),
        };
        self.search(&q, 0, self.len(), None, &mut best);
        best
    }

    /// Nearest point other than `index` itself (same tie rule). `None` for a single point.
    pub fn nearest_other(&self, index: usize) -> Option<Neighbor> {
        if self.len() < 2 {
            return None;
        }
        let q = self.coords[index];
        let start = if index == 0 { 1 } else { 0 };
        let mut best = Neighbor {
            index: start,
            distance2: dist2(&q, &self.coords[start]),
        };
        self.search(&q, 0, self.len(), Some(index), &mut best);
        Some(best)
    }

    fn search(&self, q: &[f64; 3], lo: usize, hi: usize, skip: Option<usize>, best: &mut Neighbor) {
        if hi - lo <= LEAF_SIZE {
            if box_dist2(q, &self.boxes[lo]) > best.distance2 {
                return;
            }
            for k in lo..hi {
                let i = self.perm[k] as usize;
                if Some(i) == skip {
                    continue;
                }
                let cand = Neighbor {
                    index: i,
                    distance2: dist2(q, &self.ordered[k]),
                };
                if cand.improves_on(best) {
                    *best = cand;
                }
            }
            return;
        }
        let mid = (lo + hi) / 2;
        if box_dist2(q, &self.boxes[mid]) > best.distance2 {
            return;
        }
        let node = self.perm[mid] as usize;
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - self.ordered[mid][axis];

        if Some(node) != skip {
            let cand = Neighbor {
                index: node,
                distance2: dist2(q, &self.ordered[mid]),
            };
            if cand.improves_on(best) {
                *best = cand;
            }
        }

        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, skip, best);
        self.search(q, far.0, far.1, skip, best);
    }
}

#[inline]
fn box_dist2(q: &[f64; 3], b: &[[f64; 3]; 2]) -> f64 {
    let mut d = 0.0;
    for k in 0..3 {
        let gap = (b[0][k] - q[k]).max(q[k] - b[1][k]).max(0.0);
        d += gap * gap;
    }
    d
}

/// Fills `boxes` for the range `lo..hi` and its sub-ranges; returns its box.
fn fill_boxes(
    ordered: &[[f64; 3]],
    boxes: &mut [[[f64; 3]; 2]],
    lo: usize,
    hi: usize,
) -> [[f64; 3]; 2] {
    let mut b = [[f64::INFINITY; 3], [f64::NEG_INFINITY; 3]];
    let grow = |b: &mut [[f64; 3]; 2], p: &[f64; 3]| {
        for k in 0..3 {
            b[0][k] = b[0][k].min(p[k]);
            b[1][k] = b[1][k].max(p[k]);
        }
    };
    if hi - lo <= LEAF_SIZE {
        for p in &ordered[lo..hi] {
            grow(&mut b, p);
        }
        if lo < hi {
            boxes[lo] = b;
        }
        return b;
    }
    let mid = (lo + hi) / 2;
    let left = fill_boxes(ordered, boxes, lo, mid);
    let right = fill_boxes(ordered, boxes, mid + 1, hi);
    grow(&mut b, &ordered[mid]);
    for c in [left, right] {
        for k in 0..3 {
            b[0][k] = b[0][k].min(c[0][k]);
            b[1][k] = b[1][k].max(c[1][k]);
        }
    }
    boxes[mid] = b;
    b
}

fn split(coords: &[[f64; 3]], perm: &mut [u32], axes: &mut [u8], offset: usize) {
    let len = perm.len();
    if len <= LEAF_SIZE {
        return;
    }
    let axis = widest_axis(coords, perm);
    let mid = len / 2;
    let key = |i: &u32| (coords[*i as usize][axis], *i);
    perm.select_nth_unstable_by(mid, |a, b| {
        let (ca, ia) = key(a);
        let (cb, ib) = key(b);
        ca.partial_cmp(&cb)
            .unwrap_or(Ordering::Equal)
            .then(ia.cmp(&ib))
    });
    axes[offset + mid] = axis as u8;
    let (left, rest) = perm.split_at_mut(mid);
    split(coords, left, axes, offset);
    split(coords, &mut rest[1..], axes, offset + mid + 1);
}

fn widest_axis(coords: &[[f64; 3]], perm: &[u32]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in perm {
        let c = &coords[i as usize];
        for k in 0..3 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    let spread = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let mut axis = 0;
    for k in 1..3 {
        if spread[k] > spread[axis] {
            axis = k;
        }
    }
    axis
}

pub fn build_index(set: &PointSet) -> Result<KdIndex> {
    KdIndex::build(set)
}

pub fn nearest(index: &KdIndex, query: &Point3) -> Neighbor {
    index.nearest(query)
}
