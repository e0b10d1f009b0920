//! 2D Mallat scattering transform: Morlet filter bank, coefficient cascade,
//! log-coefficient vectors, ensemble covariance, and the precision and
//! separation metrics used to score reconstructions.

pub mod filters;
pub mod scatter;

use std::path::Path;

use serde::Serialize;

pub use filters::{build_filter_bank, littlewood_paley, littlewood_paley_bounds, FilterBank};
pub use scatter::scatter2d;

use crate::grid::Grid2;

#[derive(Debug, thiserror::Error)]
pub enum MstError {
    #[error("2^{j_max} exceeds image side {image_side}")]
    ScaleTooLarge { j_max: usize, image_side: usize },
    #[error("image side {image_side} not divisible by subsample stride {subsample}")]
    SizeNotDivisible { image_side: usize, subsample: usize },
    #[error("image {image:?} does not match bank size {bank}")]
    SizeMismatch { image: (usize, usize), bank: usize },
    #[error("ensemble needs at least 2 members, got {0}")]
    EnsembleTooSmall(usize),
    #[error("sample vectors have inconsistent lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// First-order path (scale, rotation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Path1 {
    pub j1: usize,
    pub r1: usize,
}

/// Second-order path; j2 > j1 always.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Path2 {
    pub j1: usize,
    pub r1: usize,
    pub j2: usize,
    pub r2: usize,
}

/// Coefficient grids per path, spatially averaged by the father wavelet and
/// subsampled by 2^J. Paths are held in deterministic sorted order.
#[derive(Debug, Clone)]
pub struct ScatteringCoeffs {
    pub j_max: usize,
    pub n_rot: usize,
    pub zeroth: Grid2,
    pub order1: Vec<(Path1, Grid2)>,
    pub order2: Vec<(Path2, Grid2)>,
}

impl ScatteringCoeffs {
    /// Total path count (order 1 + order 2).
    pub fn n_paths(&self) -> usize {
        self.order1.len() + self.order2.len()
    }

    /// Energy per order with decimation compensation (2^J)^2 per sample,
    /// so values are comparable to the input's sum of squares.
    pub fn energies(&self) -> (f64, f64, f64) {
        let comp = ((1usize << self.j_max) * (1usize << self.j_max)) as f64;
        let e = |g: &Grid2| comp * g.data.iter().map(|v| v * v).sum::<f64>();
        let e0 = e(&self.zeroth);
        let e1 = self.order1.iter().map(|(_, g)| e(g)).sum();
        let e2 = self.order2.iter().map(|(_, g)| e(g)).sum();
        (e0, e1, e2)
    }
}

/// Expected path label sequence for a (J, L) bank, matching the order
/// produced by [`scatter2d`] and [`log_coeffs`].
pub fn path_labels(j_max: usize, n_rot: usize) -> (Vec<Path1>, Vec<Path2>) {
    let mut p1 = Vec::new();
    let mut p2 = Vec::new();
    for j1 in 0..j_max {
        for r1 in 0..n_rot {
            p1.push(Path1 { j1, r1 });
            for j2 in (j1 + 1)..j_max {
                for r2 in 0..n_rot {
                    p2.push(Path2 { j1, r1, j2, r2 });
                }
            }
        }
    }
    p1.sort();
    p2.sort();
    (p1, p2)
}

/// SX vector: spatial mean per path, floored, then natural log; order-1
/// paths first, then order-2, in deterministic path order.
pub fn log_coeffs(coeffs: &ScatteringCoeffs, floor: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(coeffs.n_paths());
    for (_, g) in &coeffs.order1 {
        out.push(g.mean().max(floor).ln());
    }
    for (_, g) in &coeffs.order2 {
        out.push(g.mean().max(floor).ln());
    }
    out
}

/// Dense symmetric matrix over coefficient indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl CovMatrix {
    pub fn zeros(dim: usize) -> Self {
        CovMatrix { dim, data: vec![0.0; dim * dim] }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.at(i, i)).sum()
    }

    pub fn frobenius_sq_diff(&self, other: &CovMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Eigenvalues via cyclic Jacobi; used for the PSD invariant check.
    pub fn sym_eigvals(&self) -> Vec<f64> {
        let n = self.dim;
        let mut a = self.data.clone();
        let scale = a.iter().fold(1e-300f64, |m, &v| m.max(v.abs()));
        for _ in 0..30 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[i * n + j] * a[i * n + j];
                }
            }
            if off.sqrt() <= 1e-12 * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[p * n + q];
                    if apq.abs() <= 1e-300 {
                        continue;
                    }
                    let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - s * akq;
                        a[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk - s * aqk;
                        a[q * n + k] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[i * n + i]).collect()
    }
}

/// Unbiased sample covariance across an ensemble of SX vectors.
pub fn covariance(ensemble: &[Vec<f64>]) -> Result<CovMatrix, MstError> {
    let g = ensemble.len();
    if g < 2 {
        return Err(MstError::EnsembleTooSmall(g));
    }
    let d = ensemble[0].len();
    for v in ensemble {
        if v.len() != d {
            return Err(MstError::LengthMismatch(d, v.len()));
        }
    }
    let mut mean = vec![0.0f64; d];
    for v in ensemble {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= g as f64;
    }
    let mut k = CovMatrix::zeros(d);
    for v in ensemble {
        for i in 0..d {
            let di = v[i] - mean[i];
            for j in i..d {
                let dj = v[j] - mean[j];
                k.data[i * d + j] += di * dj;
            }
        }
    }
    let norm = 1.0 / (g as f64 - 1.0);
    for i in 0..d {
        for j in i..d {
            let v = k.data[i * d + j] * norm;
            k.data[i * d + j] = v;
            k.data[j * d + i] = v;
        }
    }
    Ok(k)
}

fn mean_norm_sq(samples: &[Vec<f64>]) -> f64 {
    samples
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        / samples.len() as f64
}

fn mean_vector(samples: &[Vec<f64>]) -> Vec<f64> {
    let d = samples[0].len();
    let mut m = vec![0.0f64; d];
    for v in samples {
        for (mi, x) in m.iter_mut().zip(v.iter()) {
            *mi += x;
        }
    }
    for mi in m.iter_mut() {
        *mi /= samples.len() as f64;
    }
    m
}

/// Precision P = (E||SX||^2 - ||E SX||^2) / E||SX||^2, with sample means.
pub fn precision(samples: &[Vec<f64>]) -> Result<f64, MstError> {
    if samples.len() < 2 {
        return Err(MstError::EnsembleTooSmall(samples.len()));
    }
    let e_norm = mean_norm_sq(samples);
    let m = mean_vector(samples);
    let m_norm: f64 = m.iter().map(|x| x * x).sum();
    Ok((e_norm - m_norm) / e_norm)
}

/// Separation between two ensembles:
/// S = (E||SX||^2 + E||SXh||^2 - 2 E[SX].E[SXh]) / (0.5 (E||SX||^2 + E||SXh||^2)).
pub fn separation(x_samples: &[Vec<f64>], xhat_samples: &[Vec<f64>]) -> Result<f64, MstError> {
    if x_samples.is_empty() || xhat_samples.is_empty() {
        return Err(MstError::EnsembleTooSmall(0));
    }
    let d = x_samples[0].len();
    if xhat_samples[0].len() != d {
        return Err(MstError::LengthMismatch(d, xhat_samples[0].len()));
    }
    let ex = mean_norm_sq(x_samples);
    let eh = mean_norm_sq(xhat_samples);
    let mx = mean_vector(x_samples);
    let mh = mean_vector(xhat_samples);
    let dot: f64 = mx.iter().zip(mh.iter()).map(|(a, b)| a * b).sum();
    Ok((ex + eh - 2.0 * dot) / (0.5 * (ex + eh)))
}

/// Coefficient dump: one row per path with spatial mean and log mean.
pub fn write_coeffs_csv(coeffs: &ScatteringCoeffs, floor: f64, path: &Path) -> Result<(), MstError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["order", "j1", "r1", "j2", "r2", "mean", "log_mean"])?;
    for (p, g) in &coeffs.order1 {
        let m = g.mean();
        w.write_record([
            "1".into(),
            p.j1.to_string(),
            p.r1.to_string(),
            String::new(),
            String::new(),
            format!("{m:.9e}"),
            format!("{:.9}", m.max(floor).ln()),
        ])?;
    }
    for (p, g) in &coeffs.order2 {
        let m = g.mean();
        w.write_record([
            "2".into(),
            p.j1.to_string(),
            p.r1.to_string(),
            p.j2.to_string(),
            p.r2.to_string(),
            format!("{m:.9e}"),
            format!("{:.9}", m.max(floor).ln()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Rose-plot data: order-1 coefficients as (angle_deg, scale, value) rows
/// for external plotting.
pub fn write_rose_csv(coeffs: &ScatteringCoeffs, path: &Path) -> Result<(), MstError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["angle_deg", "scale", "value"])?;
    for (p, g) in &coeffs.order1 {
        let angle = 180.0 * p.r1 as f64 / coeffs.n_rot as f64;
        w.write_record([
            format!("{angle:.3}"),
            (1usize << p.j1).to_string(),
            format!("{:.9e}", g.mean()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_vector_length_at_j4_l4() {
        let (p1, p2) = path_labels(4, 4);
        assert_eq!(p1.len(), 16);
        assert_eq!(p2.len(), 96);
        let bank = build_filter_bank(4, 4, 64).unwrap();
        let img = Grid2::from_fn(64, 64, |r, c| ((r * 13 + c * 7) % 11) as f64);
        let coeffs = scatter2d(&img, &bank).unwrap();
        assert_eq!(log_coeffs(&coeffs, 1e-12).len(), 112);
        // labels align with produced order
        for ((p, _), want) in coeffs.order1.iter().zip(p1.iter()) {
            assert_eq!(p, want);
        }
        for ((p, _), want) in coeffs.order2.iter().zip(p2.iter()) {
            assert_eq!(p, want);
        }
    }

    #[test]
    fn log_floor_applies_to_dead_paths() {
        let bank = build_filter_bank(4, 4, 32).unwrap();
        let img = Grid2::zeros(32, 32);
        let coeffs = scatter2d(&img, &bank).unwrap();
        let v = log_coeffs(&coeffs, 1e-12);
        for x in v {
            assert_eq!(x, 1e-12f64.ln());
        }
    }

    #[test]
    fn all_equal_coefficients_log_to_same_value() {
        // construct directly: grids with constant value v
        let g = Grid2::from_fn(4, 4, |_, _| 2.5);
        let coeffs = ScatteringCoeffs {
            j_max: 4,
            n_rot: 4,
            zeroth: g.clone(),
            order1: vec![(Path1 { j1: 0, r1: 0 }, g.clone())],
            order2: vec![(Path2 { j1: 0, r1: 0, j2: 1, r2: 0 }, g.clone())],
        };
        let v = log_coeffs(&coeffs, 1e-12);
        for x in v {
            assert!((x - 2.5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn covariance_identical_vectors_is_zero() {
        let v = vec![1.0, -2.0, 3.0];
        let k = covariance(&[v.clone(), v.clone(), v]).unwrap();
        for x in &k.data {
            assert_eq!(*x, 0.0);
        }
    }

    #[test]
    fn covariance_two_members_rank_one() {
        let a = vec![1.0, 0.0, 2.0];
        let b = vec![3.0, 4.0, 2.0];
        let k = covariance(&[a, b]).unwrap();
        let eig = k.sym_eigvals();
        let mut sorted = eig.clone();
        sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
        // rank <= 1: all but the largest eigenvalue are ~0
        assert!(sorted[0].abs() < 1e-9 * k.trace().max(1.0));
        assert!(sorted[1].abs() < 1e-9 * k.trace().max(1.0));
    }

    #[test]
    fn covariance_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let g = 12;
        let d = 7;
        let samples: Vec<Vec<f64>> = (0..g)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let k = covariance(&samples).unwrap();
        // textbook two-pass oracle
        for i in 0..d {
            for j in 0..d {
                let mi = samples.iter().map(|v| v[i]).sum::<f64>() / g as f64;
                let mj = samples.iter().map(|v| v[j]).sum::<f64>() / g as f64;
                let want = samples
                    .iter()
                    .map(|v| (v[i] - mi) * (v[j] - mj))
                    .sum::<f64>()
                    / (g as f64 - 1.0);
                assert!((k.at(i, j) - want).abs() < 1e-10, "({i},{j})");
            }
        }
        // PSD invariant
        let tr = k.trace();
        for e in k.sym_eigvals() {
            assert!(e >= -1e-8 * tr, "eigenvalue {e}");
        }
    }

    #[test]
    fn covariance_rejects_single_member() {
        assert!(matches!(
            covariance(&[vec![1.0, 2.0]]),
            Err(MstError::EnsembleTooSmall(1))
        ));
    }

    #[test]
    fn precision_identical_samples_is_zero() {
        let v = vec![4.0, 5.0, 6.0];
        let p = precision(&[v.clone(), v.clone(), v]).unwrap();
        assert!(p.abs() < 1e-15);
    }

    #[test]
    fn precision_matches_closed_form_for_gaussian_clouds() {
        // per-coordinate variance s^2 around mean m:
        // P -> d s^2 / (d s^2 + ||m||^2)
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let d = 24;
        let s = 0.3f64;
        let m: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * i as f64).collect();
        let n = 4000;
        let samples: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                m.iter()
                    .map(|&mi| {
                        let g: f64 = rng.sample(rand_distr::StandardNormal);
                        mi + s * g
                    })
                    .collect()
            })
            .collect();
        let p = precision(&samples).unwrap();
        let m_norm: f64 = m.iter().map(|x| x * x).sum();
        let want = d as f64 * s * s / (d as f64 * s * s + m_norm);
        assert!((p - want).abs() < 0.1 * want, "P {p} vs {want}");
    }

    #[test]
    fn separation_identities() {
        // identical deterministic ensembles: S = 0
        let v = vec![1.0, 2.0, 3.0];
        let s = separation(&[v.clone(), v.clone()], &[v.clone(), v.clone()]).unwrap();
        assert!(s.abs() < 1e-15);

        // iid same-distribution: S -> 2P
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 16;
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..d)
                .map(|i| {
                    let g: f64 = rng.sample(rand_distr::StandardNormal);
                    (i as f64 * 0.2 + 1.0) + 0.25 * g
                })
                .collect()
        };
        let a: Vec<Vec<f64>> = (0..6000).map(|_| draw(&mut rng)).collect();
        let b: Vec<Vec<f64>> = (0..6000).map(|_| draw(&mut rng)).collect();
        let s = separation(&a, &b).unwrap();
        let p = precision(&a).unwrap();
        assert!((s - 2.0 * p).abs() < 0.1 * (2.0 * p), "S {s} vs 2P {}", 2.0 * p);
    }

    #[test]
    fn separated_clusters_exceed_twice_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = 8;
        let draw = |rng: &mut ChaCha8Rng, offset: f64| -> Vec<f64> {
            (0..d)
                .map(|_| {
                    let g: f64 = rng.sample(rand_distr::StandardNormal);
                    offset + 0.05 * g
                })
                .collect()
        };
        let a: Vec<Vec<f64>> = (0..800).map(|_| draw(&mut rng, 1.0)).collect();
        let b: Vec<Vec<f64>> = (0..800).map(|_| draw(&mut rng, 2.0)).collect();
        let s = separation(&a, &b).unwrap();
        let pa = precision(&a).unwrap();
        let pb = precision(&b).unwrap();
        assert!(s > 2.0 * pa.max(pb), "S {s} vs P {pa} {pb}");
    }

    #[test]
    fn csv_dumps_write() {
        let bank = build_filter_bank(4, 4, 32).unwrap();
        let img = Grid2::from_fn(32, 32, |r, c| ((r + c) % 5) as f64);
        let coeffs = scatter2d(&img, &bank).unwrap();
        let dir = std::env::temp_dir().join("porosynth_mst_csv");
        std::fs::create_dir_all(&dir).unwrap();
        write_coeffs_csv(&coeffs, 1e-12, &dir.join("coeffs.csv")).unwrap();
        write_rose_csv(&coeffs, &dir.join("rose.csv")).unwrap();
        let text = std::fs::read_to_string(dir.join("coeffs.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 112);
    }
}
