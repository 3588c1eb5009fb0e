//! Straight-line reference for one EM sweep: linear-scan correspondences,
//! densities from `tgamma` and `powf`, Horn's quaternion alignment and direct
//! sums for σ² and Q. Shares no code path with the solver.

#![allow(dead_code)]

use nalgebra::{Matrix3, Matrix4, Quaternion, SymmetricEigen, UnitQuaternion, Vector3};
use stmmreg_core::{Point3, RigidTransform};

#[derive(Debug, Clone, Copy)]
pub struct Entry {
    pub correspondence: usize,
    pub residual2: f64,
    pub posterior: f64,
    pub scale: f64,
    pub robust: f64,
}

#[derive(Debug, Clone)]
pub struct Sweep {
    /// `[view][point][other]`, other views in ascending order.
    pub table: Vec<Vec<Vec<Entry>>>,
    pub transforms: Vec<RigidTransform>,
    pub sigma2: f64,
    pub q: f64,
}

fn t_density(delta2: f64, sigma2: f64, v: f64) -> f64 {
    let d = 3.0;
    let norm = libm::tgamma((v + d) / 2.0)
        / (libm::tgamma(v / 2.0) * (std::f64::consts::PI * v).powf(d / 2.0) * sigma2.powf(d / 2.0));
    norm * (1.0 + delta2 / v).powf(-(v + d) / 2.0)
}

fn gauss_density(delta2: f64, sigma2: f64) -> f64 {
    (2.0 * std::f64::consts::PI * sigma2).powf(-1.5) * (-0.5 * delta2).exp()
}

fn scan(points: &[Point3], q: &Point3) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (h, p) in points.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.1 {
            best = (h, d);
        }
    }
    best
}

/// Horn's closed form: the rotation is the dominant eigenvector of a 4x4 matrix.
pub fn horn(pairs: &[(Point3, Point3, f64)]) -> RigidTransform {
    let w: f64 = pairs.iter().map(|p| p.2).sum();
    let sc = pairs
        .iter()
        .fold(Vector3::zeros(), |a, p| a + p.0.coords * p.2)
        / w;
    let tc = pairs
        .iter()
        .fold(Vector3::zeros(), |a, p| a + p.1.coords * p.2)
        / w;
    let mut s = Matrix3::zeros();
    for (a, b, wt) in pairs {
        s += (a.coords - sc) * (b.coords - tc).transpose() * *wt;
    }
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    #[rustfmt::skip]
    let n = Matrix4::new(
        sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
        syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
        szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
        sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(n);
    let k = eig.eigenvalues.imax();
    let e = eig.eigenvectors.column(k);
    let q = UnitQuaternion::from_quaternion(Quaternion::new(e[0], e[1], e[2], e[3]));
    let r = *q.to_rotation_matrix().matrix();
    RigidTransform::from_parts_unchecked(r, tc - r * sc)
}

/// One sweep: E-step for all views at the input transforms, M-steps in ascending
/// view order against the other views' current transforms, then σ² and Q.
pub fn one_sweep(
    sets: &[Vec<Point3>],
    transforms: &[RigidTransform],
    sigma2: f64,
    dof: f64,
    gaussian: bool,
    anchor: usize,
) -> Sweep {
    let m = sets.len();
    let moved: Vec<Vec<Point3>> = sets
        .iter()
        .zip(transforms)
        .map(|(s, t)| s.iter().map(|p| t.apply(p)).collect())
        .collect();

    let mut table = Vec::new();
    for i in 0..m {
        let mut rows = Vec::new();
        for l in 0..sets[i].len() {
            let y = moved[i][l];
            let mut row = Vec::new();
            for j in (0..m).filter(|&j| j != i) {
                let (c, r2) = scan(&moved[j], &y);
                row.push(Entry {
                    correspondence: c,
                    residual2: r2,
                    posterior: 0.0,
                    scale: 0.0,
                    robust: 0.0,
                });
            }
            let dens: Vec<f64> = row
                .iter()
                .map(|e| {
                    if gaussian {
                        gauss_density(e.residual2 / sigma2, sigma2)
                    } else {
                        t_density(e.residual2 / sigma2, sigma2, dof)
                    }
                })
                .collect();
            let total: f64 = dens.iter().sum();
            for (e, f) in row.iter_mut().zip(&dens) {
                e.posterior = f / total;
                e.scale = if gaussian {
                    1.0
                } else {
                    (dof + 3.0) / (dof + e.residual2 / sigma2)
                };
                e.robust = e.posterior * e.scale;
            }
            rows.push(row);
        }
        table.push(rows);
    }

    let mut current = transforms.to_vec();
    for i in 0..m {
        if i == anchor {
            continue;
        }
        let mut pairs = Vec::new();
        for l in 0..sets[i].len() {
            for (jpos, j) in (0..m).filter(|&j| j != i).enumerate() {
                let e = table[i][l][jpos];
                pairs.push((
                    sets[i][l],
                    current[j].apply(&sets[j][e.correspondence]),
                    e.robust,
                ));
            }
        }
        current[i] = horn(&pairs);
    }

    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..m {
        for l in 0..sets[i].len() {
            for (jpos, j) in (0..m).filter(|&j| j != i).enumerate() {
                let e = &mut table[i][l][jpos];
                let r2 = (current[i].apply(&sets[i][l])
                    - current[j].apply(&sets[j][e.correspondence]))
                .norm_squared();
                e.residual2 = r2;
                num += e.robust * r2;
                den += e.posterior;
            }
        }
    }
    let new_sigma2 = num / (3.0 * den);

    let d = 3.0;
    let mut q = 0.0;
    for rows in &table {
        for row in rows {
            for e in row {
                let delta2 = e.residual2 / new_sigma2;
                let data = -d / 2.0 * (2.0 * std::f64::consts::PI).ln() - d / 2.0 * new_sigma2.ln();
                if gaussian {
                    q += e.posterior * (data - delta2 / 2.0);
                } else {
                    let u = e.scale;
                    let gamma_block = dof / 2.0 * (dof / 2.0).ln() - libm::tgamma(dof / 2.0).ln()
                        + dof / 2.0 * (u.ln() - u)
                        - u.ln();
                    q += e.posterior * (gamma_block + data + d / 2.0 * u.ln() - 0.5 * u * delta2);
                }
            }
        }
    }

    Sweep {
        table,
        transforms: current,
        sigma2: new_sigma2,
        q,
    }
}

/// Relative difference.
pub fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

/// Largest entry-wise difference between two transforms, relative to their scale.
pub fn transform_rel(a: &RigidTransform, b: &RigidTransform) -> f64 {
    let r = (a.rotation - b.rotation).abs().max();
    let t = (a.translation - b.translation).norm()
        / a.translation.norm().max(b.translation.norm()).max(1.0);
    r.max(t)
}
