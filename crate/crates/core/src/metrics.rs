//! Per-pore geometric descriptors (volume, inertia eigensystem, anisotropy,
//! orientation) and population statistics (nearest-neighbor distances).
//!
//! Conventions: voxel centers (i + 0.5) carry unit mass; the principal axis
//! is the min-eigenvalue eigenvector of the inertia tensor (the long axis of
//! an elongated pore); angles are reported in degrees.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::voxel::Pore;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("need at least 2 centroids for nearest-neighbor distances, got {0}")]
    InsufficientPores(usize),
    #[error("empty pore")]
    EmptyPore,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Symmetric 3x3 matrix stored dense row-major.
pub type Mat3 = [[f64; 3]; 3];

/// Descriptors for one pore. `nn_distance_um` stays `None` until the
/// population pass fills it in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoreMetrics {
    pub volume_um3: f64,
    pub centroid_um: (f64, f64, f64),
    /// Inertia eigenvalues sorted ascending, voxel^2 units.
    pub eigvals: (f64, f64, f64),
    /// A = 1 - lambda_min / lambda_max, in [0, 1].
    pub anisotropy: f64,
    /// Angle between the principal (long) axis and the tensile z axis,
    /// degrees in [0, 90].
    pub theta_z: f64,
    /// In-plane angle of the principal-axis projection to x, degrees in
    /// [0, 180).
    pub phi_xy: f64,
    pub nn_distance_um: Option<f64>,
}

/// Second central moment tensor about the voxel-center centroid, unit mass
/// per voxel, voxel^2 units: I_xx = sum(dy^2 + dz^2), I_xy = -sum(dx dy), ...
pub fn inertia_tensor(pore: &Pore) -> Result<Mat3, MetricsError> {
    if pore.voxels.is_empty() {
        return Err(MetricsError::EmptyPore);
    }
    let c = pore.local_centroid();
    let mut ixx = 0.0;
    let mut iyy = 0.0;
    let mut izz = 0.0;
    let mut ixy = 0.0;
    let mut ixz = 0.0;
    let mut iyz = 0.0;
    for &(x, y, z) in &pore.voxels {
        let dx = x as f64 + 0.5 - c.0;
        let dy = y as f64 + 0.5 - c.1;
        let dz = z as f64 + 0.5 - c.2;
        ixx += dy * dy + dz * dz;
        iyy += dx * dx + dz * dz;
        izz += dx * dx + dy * dy;
        ixy += dx * dy;
        ixz += dx * dz;
        iyz += dy * dz;
    }
    Ok([[ixx, -ixy, -ixz], [-ixy, iyy, -iyz], [-ixz, -iyz, izz]])
}

fn mat_scale(m: &Mat3) -> f64 {
    let mut s: f64 = 0.0;
    for r in m {
        for &v in r {
            s = s.max(v.abs());
        }
    }
    s
}

fn mat_mul_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Closed-form eigenvalues of a symmetric 3x3 matrix (trigonometric form).
fn analytic_eigvals(m: &Mat3) -> [f64; 3] {
    let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    if p1 == 0.0 {
        let mut e = [m[0][0], m[1][1], m[2][2]];
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        return e;
    }
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = *m;
    for i in 0..3 {
        b[i][i] -= q;
        for j in 0..3 {
            b[i][j] /= p;
        }
    }
    let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e_max = q + 2.0 * p * phi.cos();
    let e_min = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    [e_min, 3.0 * q - e_max - e_min, e_max]
}

/// Cyclic Jacobi rotation eigensolver; used when the analytic eigenvector
/// construction degenerates.
fn jacobi_eig(m: &Mat3) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = *m;
    let mut v = [[0.0; 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale = mat_scale(m).max(f64::MIN_POSITIVE);
    for _ in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..2 {
            for q in (p + 1)..3 {
                if a[p][q].abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let mut rot = [[0.0; 3]; 3];
                for (i, row) in rot.iter_mut().enumerate() {
                    row[i] = 1.0;
                }
                rot[p][p] = c;
                rot[q][q] = c;
                rot[p][q] = s;
                rot[q][p] = -s;
                // a = rot^T a rot, v = v rot
                let mut na = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        let mut acc = 0.0;
                        for k in 0..3 {
                            for l in 0..3 {
                                acc += rot[k][i] * a[k][l] * rot[l][j];
                            }
                        }
                        na[i][j] = acc;
                    }
                }
                a = na;
                let mut nv = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        let mut acc = 0.0;
                        for k in 0..3 {
                            acc += v[i][k] * rot[k][j];
                        }
                        nv[i][j] = acc;
                    }
                }
                v = nv;
            }
        }
    }
    let eigvals = [a[0][0], a[1][1], a[2][2]];
    let eigvecs = [
        [v[0][0], v[1][0], v[2][0]],
        [v[0][1], v[1][1], v[2][1]],
        [v[0][2], v[1][2], v[2][2]],
    ];
    (eigvals, eigvecs)
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn apply_sign_convention(v: &mut [f64; 3]) {
    let tol = 1e-12 * (v[0].abs() + v[1].abs() + v[2].abs());
    for i in 0..3 {
        if v[i].abs() > tol {
            if v[i] < 0.0 {
                for c in v.iter_mut() {
                    *c = -*c;
                }
            }
            return;
        }
    }
}

/// Eigendecomposition of a symmetric 3x3 matrix: eigenvalues ascending,
/// orthonormal eigenvectors (rows of the returned array), first nonzero
/// component of each eigenvector positive.
pub fn eig_sym3(m: &Mat3) -> ((f64, f64, f64), [[f64; 3]; 3]) {
    let scale = mat_scale(m);
    if scale == 0.0 {
        return ((0.0, 0.0, 0.0), [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    }
    let vals = analytic_eigvals(m);
    let degenerate = (vals[1] - vals[0]) <= 1e-12 * scale || (vals[2] - vals[1]) <= 1e-12 * scale;

    let (mut eigvals, mut eigvecs);
    if degenerate {
        let (jv, jw) = jacobi_eig(m);
        eigvals = jv;
        eigvecs = jw;
    } else {
        // Cayley-Hamilton: the columns of (A - l2 I)(A - l3 I) span the
        // eigenspace of l1; pick the largest column per eigenvalue.
        eigvals = vals;
        eigvecs = [[0.0; 3]; 3];
        let mut failed = false;
        for (i, vec_out) in eigvecs.iter_mut().enumerate() {
            let l_other: [f64; 2] = match i {
                0 => [vals[1], vals[2]],
                1 => [vals[0], vals[2]],
                _ => [vals[0], vals[1]],
            };
            let mut a1 = *m;
            let mut a2 = *m;
            for d in 0..3 {
                a1[d][d] -= l_other[0];
                a2[d][d] -= l_other[1];
            }
            // columns of a1*a2
            let mut best = [0.0; 3];
            let mut best_norm = 0.0;
            for col in 0..3 {
                let v = mat_mul_vec(&a1, [a2[0][col], a2[1][col], a2[2][col]]);
                let n = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
                if n > best_norm {
                    best_norm = n;
                    best = v;
                }
            }
            if best_norm.sqrt() <= 1e-9 * scale * scale {
                failed = true;
                break;
            }
            *vec_out = normalize(best);
        }
        if failed {
            let (jv, jw) = jacobi_eig(m);
            eigvals = jv;
            eigvecs = jw;
        }
    }

    // Sort ascending, carrying eigenvectors along.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eigvals[a].partial_cmp(&eigvals[b]).unwrap());
    let vals = (eigvals[order[0]], eigvals[order[1]], eigvals[order[2]]);
    let mut vecs = [eigvecs[order[0]], eigvecs[order[1]], eigvecs[order[2]]];

    // Deterministic orthonormal frame: re-orthogonalize the second and
    // third vectors against earlier ones (matters for Jacobi ties).
    let v0 = normalize(vecs[0]);
    let mut v1 = vecs[1];
    let d = v0[0] * v1[0] + v0[1] * v1[1] + v0[2] * v1[2];
    for i in 0..3 {
        v1[i] -= d * v0[i];
    }
    let v1 = normalize(v1);
    let v2 = cross(v0, v1);
    vecs = [v0, v1, v2];
    for v in vecs.iter_mut() {
        apply_sign_convention(v);
    }
    (vals, vecs)
}

/// Anisotropy A = 1 - lambda_min / lambda_max; A = 0 when lambda_max = 0.
pub fn anisotropy(eigvals: (f64, f64, f64)) -> f64 {
    if eigvals.2 <= 0.0 {
        return 0.0;
    }
    1.0 - eigvals.0 / eigvals.2
}

/// Orientation of the principal (min-eigenvalue) axis: angle to z folded to
/// [0, 90] degrees, and in-plane angle to x folded to [0, 180) degrees.
pub fn orientation(eigvecs: &[[f64; 3]; 3]) -> (f64, f64) {
    let v = eigvecs[0];
    let theta_z = v[2].abs().clamp(0.0, 1.0).acos().to_degrees();
    let planar = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let phi_xy = if planar < 1e-9 {
        0.0
    } else {
        let mut phi = v[1].atan2(v[0]).to_degrees();
        if phi < 0.0 {
            phi += 180.0;
        }
        if phi >= 180.0 {
            phi -= 180.0;
        }
        phi
    };
    (theta_z, phi_xy)
}

/// Nearest-neighbor distance for each centroid via a uniform grid hash with
/// expanding shell search.
pub fn nn_distances(centroids: &[(f64, f64, f64)]) -> Result<Vec<f64>, MetricsError> {
    let n = centroids.len();
    if n < 2 {
        return Err(MetricsError::InsufficientPores(n));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &(x, y, z) in centroids {
        for (a, v) in [x, y, z].into_iter().enumerate() {
            lo[a] = lo[a].min(v);
            hi[a] = hi[a].max(v);
        }
    }
    let span = [
        (hi[0] - lo[0]).max(1e-9),
        (hi[1] - lo[1]).max(1e-9),
        (hi[2] - lo[2]).max(1e-9),
    ];
    let cell = ((span[0] * span[1] * span[2]) / n as f64).cbrt().max(1e-9);
    let dims = [
        ((span[0] / cell).ceil() as usize + 1).min(256),
        ((span[1] / cell).ceil() as usize + 1).min(256),
        ((span[2] / cell).ceil() as usize + 1).min(256),
    ];
    let cell_of = |p: (f64, f64, f64)| -> [usize; 3] {
        [
            (((p.0 - lo[0]) / span[0] * dims[0] as f64) as usize).min(dims[0] - 1),
            (((p.1 - lo[1]) / span[1] * dims[1] as f64) as usize).min(dims[1] - 1),
            (((p.2 - lo[2]) / span[2] * dims[2] as f64) as usize).min(dims[2] - 1),
        ]
    };
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
    for (i, &p) in centroids.iter().enumerate() {
        let c = cell_of(p);
        buckets[c[0] + dims[0] * (c[1] + dims[1] * c[2])].push(i);
    }
    let cell_size = [
        span[0] / dims[0] as f64,
        span[1] / dims[1] as f64,
        span[2] / dims[2] as f64,
    ];
    let min_cell = cell_size[0].min(cell_size[1]).min(cell_size[2]);
    let max_ring = dims[0].max(dims[1]).max(dims[2]);

    let mut out = Vec::with_capacity(n);
    for (i, &p) in centroids.iter().enumerate() {
        let home = cell_of(p);
        let mut best = f64::INFINITY;
        for ring in 0..=max_ring {
            // Once a candidate exists, rings beyond best/min_cell + 1 cannot
            // contain anything closer.
            if best.is_finite() && (ring as f64 - 1.0) * min_cell > best {
                break;
            }
            for dz in -(ring as i64)..=ring as i64 {
                for dy in -(ring as i64)..=ring as i64 {
                    for dx in -(ring as i64)..=ring as i64 {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring as i64 {
                            continue;
                        }
                        let (cx, cy, cz) = (home[0] as i64 + dx, home[1] as i64 + dy, home[2] as i64 + dz);
                        if cx < 0 || cy < 0 || cz < 0 || cx >= dims[0] as i64 || cy >= dims[1] as i64 || cz >= dims[2] as i64 {
                            continue;
                        }
                        for &j in &buckets[cx as usize + dims[0] * (cy as usize + dims[1] * cz as usize)] {
                            if j == i {
                                continue;
                            }
                            let q = centroids[j];
                            let d = ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2) + (p.2 - q.2).powi(2)).sqrt();
                            if d < best {
                                best = d;
                            }
                        }
                    }
                }
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Compose the per-pore descriptors. `nn_distance_um` is left unset.
pub fn metrics_for(pore: &Pore) -> Result<PoreMetrics, MetricsError> {
    let tensor = inertia_tensor(pore)?;
    let (eigvals, eigvecs) = eig_sym3(&tensor);
    let a = anisotropy(eigvals);
    let (theta_z, phi_xy) = orientation(&eigvecs);
    Ok(PoreMetrics {
        volume_um3: pore.volume_um3(),
        centroid_um: pore.centroid_um(),
        eigvals,
        anisotropy: a,
        theta_z,
        phi_xy,
        nn_distance_um: None,
    })
}

/// Fill `nn_distance_um` across a population (no-op with fewer than 2 pores).
pub fn attach_nn_distances(metrics: &mut [PoreMetrics]) -> Result<(), MetricsError> {
    if metrics.len() < 2 {
        return Ok(());
    }
    let centroids: Vec<(f64, f64, f64)> = metrics.iter().map(|m| m.centroid_um).collect();
    let nn = nn_distances(&centroids)?;
    for (m, d) in metrics.iter_mut().zip(nn) {
        m.nn_distance_um = Some(d);
    }
    Ok(())
}

/// Metrics table: one row per pore with the mandatory header row.
pub fn write_metrics_csv(metrics: &[PoreMetrics], path: &Path) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "x", "y", "z", "volume_um3", "anisotropy", "theta_z", "phi_xy", "nn_um"])?;
    for (i, m) in metrics.iter().enumerate() {
        w.write_record([
            i.to_string(),
            format!("{:.6}", m.centroid_um.0),
            format!("{:.6}", m.centroid_um.1),
            format!("{:.6}", m.centroid_um.2),
            format!("{:.6}", m.volume_um3),
            format!("{:.6}", m.anisotropy),
            format!("{:.6}", m.theta_z),
            format!("{:.6}", m.phi_xy),
            m.nn_distance_um.map(|d| format!("{d:.6}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<PoreMetrics>, MetricsError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("").parse::<f64>().unwrap_or(0.0);
        let nn = rec.get(8).filter(|s| !s.is_empty()).and_then(|s| s.parse::<f64>().ok());
        out.push(PoreMetrics {
            volume_um3: f(4),
            centroid_um: (f(1), f(2), f(3)),
            eigvals: (0.0, 0.0, 0.0),
            anisotropy: f(5),
            theta_z: f(6),
            phi_xy: f(7),
            nn_distance_um: nn,
        });
    }
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use crate::voxel::Pore;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pore_from_voxels(voxels: Vec<(u32, u32, u32)>) -> Pore {
        Pore { voxels, bbox_origin: (0, 0, 0), voxel_size: 4.0 }
    }

    #[test]
    fn single_voxel_zero_tensor() {
        let p = pore_from_voxels(vec![(3, 4, 5)]);
        let t = inertia_tensor(&p).unwrap();
        for row in t {
            for v in row {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn two_voxel_rod_tensor() {
        let p = pore_from_voxels(vec![(0, 0, 0), (1, 0, 0)]);
        let t = inertia_tensor(&p).unwrap();
        assert!((t[0][0] - 0.0).abs() < 1e-12);
        assert!((t[1][1] - 0.5).abs() < 1e-12);
        assert!((t[2][2] - 0.5).abs() < 1e-12);
        assert!(t[0][1].abs() < 1e-12 && t[0][2].abs() < 1e-12 && t[1][2].abs() < 1e-12);
    }

    #[test]
    fn random_blob_matches_moment_oracle() {
        for seed in 0..12 {
            let p = random_blob(seed, 50);
            let got = inertia_tensor(&p).unwrap();
            let want = moment_oracle(&p);
            let scale = want.iter().flatten().fold(1.0f64, |a, &b| a.max(b.abs()));
            for i in 0..3 {
                for j in 0..3 {
                    assert!(
                        (got[i][j] - want[i][j]).abs() <= 1e-12 * scale,
                        "seed {seed} entry ({i},{j}): {} vs {}",
                        got[i][j],
                        want[i][j]
                    );
                }
            }
        }
    }

    #[test]
    fn eig_identity_matrix() {
        let ((a, b, c), vecs) = eig_sym3(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!((a, b, c), (1.0, 1.0, 1.0));
        for (i, v) in vecs.iter().enumerate() {
            for (j, &x) in v.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((x - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eig_diagonal() {
        let ((a, b, c), _) = eig_sym3(&[[4.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 8.0]]);
        assert!((a - 2.0).abs() < 1e-12 && (b - 4.0).abs() < 1e-12 && (c - 8.0).abs() < 1e-12);
    }

    fn reconstruction_residual(m: &Mat3, vals: (f64, f64, f64), vecs: &[[f64; 3]; 3]) -> f64 {
        let lam = [vals.0, vals.1, vals.2];
        let mut rec = [[0.0f64; 3]; 3];
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    rec[i][j] += lam[k] * vecs[k][i] * vecs[k][j];
                }
            }
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                num += (rec[i][j] - m[i][j]).powi(2);
                den += m[i][j].powi(2);
            }
        }
        (num / den.max(1e-300)).sqrt()
    }

    #[test]
    fn eig_random_matrices_vs_charpoly_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..200 {
            let mut m = [[0.0f64; 3]; 3];
            for i in 0..3 {
                for j in i..3 {
                    let v = rng.random_range(-5.0..5.0);
                    m[i][j] = v;
                    m[j][i] = v;
                }
            }
            let (vals, vecs) = eig_sym3(&m);
            let oracle = charpoly_eigvals_oracle(&m);
            let scale = mat_scale(&m).max(1.0);
            assert!((vals.0 - oracle[0]).abs() < 1e-7 * scale, "trial {trial}: {vals:?} vs {oracle:?}");
            assert!((vals.1 - oracle[1]).abs() < 1e-7 * scale);
            assert!((vals.2 - oracle[2]).abs() < 1e-7 * scale);
            assert!(reconstruction_residual(&m, vals, &vecs) <= 1e-8, "trial {trial}");
            // orthonormality
            for a in 0..3 {
                for b in 0..3 {
                    let dot: f64 = (0..3).map(|i| vecs[a][i] * vecs[b][i]).sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-9, "trial {trial} ortho ({a},{b}) = {dot}");
                }
            }
        }
    }

    #[test]
    fn eig_degenerate_spectra_permitted() {
        let m = [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 7.0]];
        let (vals, vecs) = eig_sym3(&m);
        assert!((vals.0 - 2.0).abs() < 1e-12 && (vals.1 - 2.0).abs() < 1e-12 && (vals.2 - 7.0).abs() < 1e-12);
        assert!(reconstruction_residual(&m, vals, &vecs) <= 1e-8);
    }

    #[test]
    fn anisotropy_spot_values() {
        assert_eq!(anisotropy((1.0, 1.0, 1.0)), 0.0);
        assert_eq!(anisotropy((2.0, 4.0, 8.0)), 0.75);
        assert_eq!(anisotropy((0.0, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn digital_ball_is_nearly_isotropic() {
        let ball = rasterized_ellipsoid(5.0, 5.0, [0.0, 0.0, 1.0]);
        let t = moment_oracle(&ball);
        let (vals, _) = eig_sym3(&t);
        assert!(anisotropy(vals) < 0.05, "A = {}", anisotropy(vals));
    }

    #[test]
    fn rod_along_x_orientation() {
        let p = pore_from_voxels((0..12).map(|i| (i, 0, 0)).collect());
        let m = metrics_for(&p).unwrap();
        assert!((m.theta_z - 90.0).abs() < 1e-9);
        assert!(m.phi_xy.abs() < 1e-9);
    }

    #[test]
    fn rod_along_z_orientation() {
        let p = pore_from_voxels((0..12).map(|i| (0, 0, i)).collect());
        let m = metrics_for(&p).unwrap();
        assert!(m.theta_z.abs() < 1e-9);
        assert_eq!(m.phi_xy, 0.0);
    }

    #[test]
    fn diagonal_ellipsoid_theta() {
        let p = rasterized_ellipsoid(14.0, 5.0, [1.0, 1.0, 1.0]);
        let m = metrics_for(&p).unwrap();
        let want = (1.0f64 / 3.0f64.sqrt()).acos().to_degrees(); // 54.7356...
        assert!((m.theta_z - want).abs() < 1.0, "theta {} vs {}", m.theta_z, want);
    }

    #[test]
    fn nn_distance_345() {
        let nn = nn_distances(&[(0.0, 0.0, 0.0), (3.0, 4.0, 0.0)]).unwrap();
        assert!((nn[0] - 5.0).abs() < 1e-12 && (nn[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn nn_distance_collinear() {
        let nn = nn_distances(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (10.0, 0.0, 0.0)]).unwrap();
        assert_eq!(nn, vec![1.0, 1.0, 9.0]);
    }

    #[test]
    fn nn_distance_rejects_single() {
        assert!(matches!(
            nn_distances(&[(0.0, 0.0, 0.0)]),
            Err(MetricsError::InsufficientPores(1))
        ));
    }

    #[test]
    fn nn_distances_match_all_pairs_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<(f64, f64, f64)> = (0..200)
            .map(|_| {
                (
                    rng.random_range(0.0..500.0),
                    rng.random_range(0.0..500.0),
                    rng.random_range(0.0..500.0),
                )
            })
            .collect();
        let got = nn_distances(&pts).unwrap();
        for (i, &p) in pts.iter().enumerate() {
            let want = pts
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2) + (p.2 - q.2).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!((got[i] - want).abs() < 1e-12, "point {i}: {} vs {}", got[i], want);
        }
    }

    #[test]
    fn metrics_for_cube() {
        let mut voxels = Vec::new();
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    voxels.push((x, y, z));
                }
            }
        }
        let m = metrics_for(&pore_from_voxels(voxels)).unwrap();
        assert_eq!(m.volume_um3, 512.0);
        assert!(m.anisotropy.abs() < 1e-12);
        assert!(m.nn_distance_um.is_none());
    }

    #[test]
    fn csv_round_trip() {
        let p = pore_from_voxels((0..10).map(|i| (i, 0, 0)).collect());
        let mut ms = vec![metrics_for(&p).unwrap(), metrics_for(&p).unwrap()];
        attach_nn_distances(&mut ms).unwrap();
        let dir = std::env::temp_dir().join("porosynth_metrics_csv");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("metrics.csv");
        write_metrics_csv(&ms, &path).unwrap();
        let back = read_metrics_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back[0].volume_um3 - ms[0].volume_um3).abs() < 1e-6);
        assert!(back[0].nn_distance_um.is_some());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        /// Translation moves only the centroid; the axis permutation
        /// x->y->z->x leaves eigenvalues and A unchanged; doubling
        /// voxel_size scales volume by 8 and nothing else.
        #[test]
        fn invariances(seed in 0u64..300) {
            let p = random_blob(seed, 40);
            let m0 = metrics_for(&p).unwrap();

            let shifted = Pore {
                voxels: p.voxels.iter().map(|&(x, y, z)| (x + 3, y + 7, z + 2)).collect(),
                bbox_origin: p.bbox_origin,
                voxel_size: p.voxel_size,
            };
            let m1 = metrics_for(&shifted).unwrap();
            prop_assert!((m0.anisotropy - m1.anisotropy).abs() < 1e-9);
            prop_assert!((m0.theta_z - m1.theta_z).abs() < 1e-6);
            prop_assert!((m0.volume_um3 - m1.volume_um3).abs() < 1e-9);

            let rotated = Pore {
                voxels: p.voxels.iter().map(|&(x, y, z)| (z, x, y)).collect(),
                bbox_origin: p.bbox_origin,
                voxel_size: p.voxel_size,
            };
            let m2 = metrics_for(&rotated).unwrap();
            prop_assert!((m0.eigvals.0 - m2.eigvals.0).abs() < 1e-9 * (1.0 + m0.eigvals.2.abs()));
            prop_assert!((m0.eigvals.1 - m2.eigvals.1).abs() < 1e-9 * (1.0 + m0.eigvals.2.abs()));
            prop_assert!((m0.eigvals.2 - m2.eigvals.2).abs() < 1e-9 * (1.0 + m0.eigvals.2.abs()));
            prop_assert!((m0.anisotropy - m2.anisotropy).abs() < 1e-9);

            let scaled = Pore { voxels: p.voxels.clone(), bbox_origin: p.bbox_origin, voxel_size: p.voxel_size * 2.0 };
            let m3 = metrics_for(&scaled).unwrap();
            prop_assert!((m3.volume_um3 / m0.volume_um3 - 8.0).abs() < 1e-9);
            prop_assert!((m0.anisotropy - m3.anisotropy).abs() < 1e-12);
            prop_assert!((m0.theta_z - m3.theta_z).abs() < 1e-12);

            prop_assert!((0.0..=1.0).contains(&m0.anisotropy));
        }
    }
}
