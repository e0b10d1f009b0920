//! Part boundary extraction and reconstruction: unroll the outer surface to
//! a (θ, z) radial-deviation map, smooth it, and re-roll generated maps into
//! voxel masks.
//!
//! Rays are cast from the per-slice solid centroid rather than a fixed axis,
//! which tolerates slight part tilt; the per-slice centers are stored on the
//! map so re-rolling is exact.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grid::Grid2;
use crate::voxel::{Phase, VoxelVolume};

#[derive(Debug, thiserror::Error)]
pub enum SurfaceError {
    #[error("slice z={0} has no solid voxels")]
    EmptySlice(usize),
    #[error("smoothing window of {window} samples must exceed polynomial order {order}")]
    WindowTooSmall { window: usize, order: usize },
    #[error("surface map (radius {needed_um} um) does not fit in volume of {available_um} um")]
    DoesNotFit { needed_um: f64, available_um: f64 },
    #[error("map too small: n_theta and n_z must both be >= 4, got {0}x{1}")]
    MapTooSmall(usize, usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("raw data length {got} floats, expected {expected}")]
    RawLengthMismatch { got: usize, expected: usize },
}

/// Unrolled (θ, z) grid of radial deviation from the nominal cylinder.
/// `values` is θ-fastest: values[z * n_theta + t], micrometers.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMap {
    pub n_theta: usize,
    pub n_z: usize,
    pub values: Vec<f64>,
    pub nominal_radius: f64,
    pub z_spacing: f64,
    /// Ray-cast origin per slice, micrometers in part coordinates.
    pub axis_center: Vec<(f64, f64)>,
}

impl SurfaceMap {
    pub fn new(
        n_theta: usize,
        n_z: usize,
        values: Vec<f64>,
        nominal_radius: f64,
        z_spacing: f64,
        axis_center: Vec<(f64, f64)>,
    ) -> Result<Self, SurfaceError> {
        if n_theta < 4 || n_z < 4 {
            return Err(SurfaceError::MapTooSmall(n_theta, n_z));
        }
        assert_eq!(values.len(), n_theta * n_z);
        assert_eq!(axis_center.len(), n_z);
        Ok(SurfaceMap { n_theta, n_z, values, nominal_radius, z_spacing, axis_center })
    }

    #[inline]
    pub fn at(&self, t: usize, z: usize) -> f64 {
        self.values[z * self.n_theta + t]
    }

    #[inline]
    pub fn set(&mut self, t: usize, z: usize, v: f64) {
        self.values[z * self.n_theta + t] = v;
    }

    /// View as a grid with rows = z, cols = θ.
    pub fn to_grid(&self) -> Grid2 {
        Grid2::from_vec(self.n_z, self.n_theta, self.values.clone())
    }

    /// Replace values from a grid of the same shape.
    pub fn with_values_from(&self, g: &Grid2) -> SurfaceMap {
        assert_eq!(g.rows, self.n_z);
        assert_eq!(g.cols, self.n_theta);
        SurfaceMap { values: g.data.clone(), ..self.clone() }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }
}

/// Interpolated boundary radius at fractional angle index `t` (periodic) and
/// row `z` (clamped).
fn radius_at(map: &SurfaceMap, t: f64, z: f64) -> f64 {
    let (nt, nz) = (map.n_theta as i64, map.n_z as i64);
    let t0 = t.floor();
    let z0 = z.floor();
    let ft = t - t0;
    let fz = z - z0;
    let ti = [t0 as i64, t0 as i64 + 1];
    let zi = [
        (z0 as i64).clamp(0, nz - 1),
        (z0 as i64 + 1).clamp(0, nz - 1),
    ];
    let mut acc = 0.0;
    for (wi, &tt) in [1.0 - ft, ft].iter().zip(ti.iter()) {
        for (wj, &zz) in [1.0 - fz, fz].iter().zip(zi.iter()) {
            let tt = tt.rem_euclid(nt) as usize;
            acc += wi * wj * map.values[zz as usize * map.n_theta + tt];
        }
    }
    map.nominal_radius + acc
}

fn slice_axis_center(map: &SurfaceMap, z: f64) -> (f64, f64) {
    let z0 = (z.floor() as i64).clamp(0, map.n_z as i64 - 1) as usize;
    let z1 = (z0 + 1).min(map.n_z - 1);
    let f = (z - z0 as f64).clamp(0.0, 1.0);
    let a = map.axis_center[z0];
    let b = map.axis_center[z1];
    (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1))
}

/// Cast rays from the per-slice solid centroid and record the outermost
/// solid radius per (θ, z); deviations are measured from the global mean
/// radius.
pub fn unroll(volume: &VoxelVolume, n_theta: usize) -> Result<SurfaceMap, SurfaceError> {
    let (nx, ny, nz) = volume.dims();
    let vs = volume.voxel_size();
    // Bilinear interpolation of the binary interior indicator; the 0.5
    // iso-contour localizes a smooth boundary to a small fraction of a voxel.
    let indicator = |px: f64, py: f64, z: usize| -> f64 {
        let gx = px / vs - 0.5;
        let gy = py / vs - 0.5;
        let x0 = gx.floor() as i64;
        let y0 = gy.floor() as i64;
        let fx = gx - x0 as f64;
        let fy = gy - y0 as f64;
        let mut acc = 0.0;
        for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                let (x, y) = (x0 + dx, y0 + dy);
                if x < 0 || y < 0 || x >= nx as i64 || y >= ny as i64 {
                    continue; // outside the grid counts as exterior (0)
                }
                if volume.phase(x as usize, y as usize, z) != Phase::Exterior {
                    acc += wx * wy;
                }
            }
        }
        acc
    };
    let solid_at = |px: f64, py: f64, z: usize| -> bool { indicator(px, py, z) >= 0.5 };

    let mut radii = vec![0.0f64; n_theta * nz];
    let mut centers = Vec::with_capacity(nz);
    let max_r = ((nx * nx + ny * ny) as f64).sqrt() * vs;

    for z in 0..nz {
        // solid = anything interior (solid or pore phase)
        let mut cx = 0.0;
        let mut cy = 0.0;
        let mut count = 0usize;
        for y in 0..ny {
            for x in 0..nx {
                if volume.phase(x, y, z) != Phase::Exterior {
                    cx += (x as f64 + 0.5) * vs;
                    cy += (y as f64 + 0.5) * vs;
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(SurfaceError::EmptySlice(z));
        }
        cx /= count as f64;
        cy /= count as f64;
        centers.push((cx, cy));

        let step = 0.25 * vs;
        for k in 0..n_theta {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / n_theta as f64;
            let (dx, dy) = (theta.cos(), theta.sin());
            // march outward, remember the last solid sample
            let mut last_solid = 0.0f64;
            let mut r = 0.0;
            while r <= max_r {
                if solid_at(cx + r * dx, cy + r * dy, z) {
                    last_solid = r;
                }
                r += step;
            }
            // bisect between last solid and the next sample for sub-voxel placement
            let mut lo = last_solid;
            let mut hi = last_solid + step;
            for _ in 0..8 {
                let mid = 0.5 * (lo + hi);
                if solid_at(cx + mid * dx, cy + mid * dy, z) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let coarse = 0.5 * (lo + hi);
            // The single-ray crossing is quantized by rasterization; average
            // crossings over parallel rays offset along the local tangent
            // (the boundary is near-perpendicular to the ray) to recover
            // sub-voxel placement.
            let (tx, ty) = (-dy, dx);
            let mut num = 0.0;
            let mut den = 0.0;
            for s in -3i64..=3 {
                let off = s as f64 * 0.75 * vs;
                let (ox, oy) = (cx + off * tx, cy + off * ty);
                let (mut lo, mut hi) = (coarse - 1.5 * vs, coarse + 1.5 * vs);
                if !solid_at(ox + lo * dx, oy + lo * dy, z) || solid_at(ox + hi * dx, oy + hi * dy, z) {
                    continue; // auxiliary ray does not bracket; skip it
                }
                for _ in 0..16 {
                    let mid = 0.5 * (lo + hi);
                    if solid_at(ox + mid * dx, oy + mid * dy, z) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let w = (-(off * off) / (2.0 * (2.0 * vs) * (2.0 * vs))).exp();
                num += w * 0.5 * (lo + hi);
                den += w;
            }
            radii[z * n_theta + k] = if den > 0.0 { num / den } else { coarse };
        }
    }

    let nominal = radii.iter().sum::<f64>() / radii.len() as f64;
    let values: Vec<f64> = radii.iter().map(|r| r - nominal).collect();
    SurfaceMap::new(n_theta, nz, values, nominal, vs, centers)
}

/// Savitzky-Golay smoothing weights: least-squares degree-`order` fit over
/// 2h+1 centered samples, evaluated at the center.
fn savgol_weights(half: usize, order: usize) -> Vec<f64> {
    let m = 2 * half + 1;
    let n = order + 1;
    // normal equations G a = X^T e with X_ij = x_i^j, x in [-1, 1]
    let xs: Vec<f64> = (0..m).map(|i| (i as f64 - half as f64) / half.max(1) as f64).collect();
    let mut g = vec![vec![0.0f64; n]; n];
    for x in &xs {
        let mut pow = vec![1.0; 2 * n];
        for p in 1..2 * n {
            pow[p] = pow[p - 1] * x;
        }
        for i in 0..n {
            for j in 0..n {
                g[i][j] += pow[i + j];
            }
        }
    }
    // invert G by Gaussian elimination with partial pivoting
    let mut aug = vec![vec![0.0f64; 2 * n]; n];
    for i in 0..n {
        aug[i][..n].copy_from_slice(&g[i]);
        aug[i][n + i] = 1.0;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| aug[a][col].abs().partial_cmp(&aug[b][col].abs()).unwrap()).unwrap();
        aug.swap(col, piv);
        let d = aug[col][col];
        for v in aug[col].iter_mut() {
            *v /= d;
        }
        for row in 0..n {
            if row != col {
                let f = aug[row][col];
                for k in 0..2 * n {
                    aug[row][k] -= f * aug[col][k];
                }
            }
        }
    }
    // weight_i = sum_j invG[0][j] * x_i^j  (fit evaluated at x = 0)
    let inv0: Vec<f64> = (0..n).map(|j| aug[0][n + j]).collect();
    xs.iter()
        .map(|&x| {
            let mut pow = 1.0;
            let mut acc = 0.0;
            for &c in &inv0 {
                acc += c * pow;
                pow *= x;
            }
            acc
        })
        .collect()
}

fn window_half(window_um: f64, spacing_um: f64, order: usize) -> Result<usize, SurfaceError> {
    let mut w = (window_um / spacing_um).ceil() as usize;
    if w % 2 == 0 {
        w += 1;
    }
    if w <= order {
        return Err(SurfaceError::WindowTooSmall { window: w, order });
    }
    Ok(w / 2)
}

/// Separable Savitzky-Golay smoothing: along θ with periodic wrap, then
/// along z with edge replication. The window is given in micrometers and
/// converted per axis (θ via arc length at the nominal radius).
pub fn savgol(map: &SurfaceMap, window_um: f64, order: usize) -> Result<SurfaceMap, SurfaceError> {
    let arc_spacing = 2.0 * std::f64::consts::PI * map.nominal_radius / map.n_theta as f64;
    let h_theta = window_half(window_um, arc_spacing, order)?;
    let h_z = window_half(window_um, map.z_spacing, order)?;
    let wt = savgol_weights(h_theta, order);
    let wz = savgol_weights(h_z, order);

    let (nt, nz) = (map.n_theta, map.n_z);
    let mut pass1 = vec![0.0f64; nt * nz];
    for z in 0..nz {
        for t in 0..nt {
            let mut acc = 0.0;
            for (k, w) in wt.iter().enumerate() {
                let tt = (t as i64 + k as i64 - h_theta as i64).rem_euclid(nt as i64) as usize;
                acc += w * map.values[z * nt + tt];
            }
            pass1[z * nt + t] = acc;
        }
    }
    let mut out = vec![0.0f64; nt * nz];
    for z in 0..nz {
        for t in 0..nt {
            let mut acc = 0.0;
            for (k, w) in wz.iter().enumerate() {
                let zz = (z as i64 + k as i64 - h_z as i64).clamp(0, nz as i64 - 1) as usize;
                acc += w * pass1[zz * nt + t];
            }
            out[z * nt + t] = acc;
        }
    }
    Ok(SurfaceMap { values: out, ..map.clone() })
}

/// Row and column means removed by [`demean`], for later re-meaning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemovedMeans {
    pub row_means: Vec<f64>,
    pub col_means: Vec<f64>,
}

/// Subtract per-z row means, then per-θ column means. The removed profile is
/// returned so generated maps can be re-meaned.
pub fn demean(map: &SurfaceMap) -> (SurfaceMap, RemovedMeans) {
    let (nt, nz) = (map.n_theta, map.n_z);
    let mut values = map.values.clone();
    let mut row_means = Vec::with_capacity(nz);
    for z in 0..nz {
        let m = values[z * nt..(z + 1) * nt].iter().sum::<f64>() / nt as f64;
        for t in 0..nt {
            values[z * nt + t] -= m;
        }
        row_means.push(m);
    }
    let mut col_means = Vec::with_capacity(nt);
    for t in 0..nt {
        let m = (0..nz).map(|z| values[z * nt + t]).sum::<f64>() / nz as f64;
        for z in 0..nz {
            values[z * nt + t] -= m;
        }
        col_means.push(m);
    }
    (SurfaceMap { values, ..map.clone() }, RemovedMeans { row_means, col_means })
}

/// Add back a removed mean profile (inverse of [`demean`]); the profile is
/// resampled if the map resolution changed.
pub fn remean(map: &SurfaceMap, means: &RemovedMeans) -> SurfaceMap {
    let (nt, nz) = (map.n_theta, map.n_z);
    let sample = |v: &[f64], i: usize, n_out: usize| -> f64 {
        if v.len() == n_out {
            return v[i];
        }
        let pos = (i as f64 + 0.5) * v.len() as f64 / n_out as f64 - 0.5;
        let lo = pos.floor().clamp(0.0, v.len() as f64 - 1.0) as usize;
        let hi = (lo + 1).min(v.len() - 1);
        let f = (pos - lo as f64).clamp(0.0, 1.0);
        v[lo] * (1.0 - f) + v[hi] * f
    };
    let mut values = map.values.clone();
    for z in 0..nz {
        let rm = sample(&means.row_means, z, nz);
        for t in 0..nt {
            values[z * nt + t] += rm + sample(&means.col_means, t, nt);
        }
    }
    SurfaceMap { values, ..map.clone() }
}

/// Bilinear resample to a new grid, θ treated periodically, z clamped.
pub fn resize(map: &SurfaceMap, to: (usize, usize)) -> Result<SurfaceMap, SurfaceError> {
    let (nt2, nz2) = to;
    if nt2 < 4 || nz2 < 4 {
        return Err(SurfaceError::MapTooSmall(nt2, nz2));
    }
    if (nt2, nz2) == (map.n_theta, map.n_z) {
        return Ok(map.clone());
    }
    let mut values = vec![0.0f64; nt2 * nz2];
    for z in 0..nz2 {
        let src_z = (z as f64 + 0.5) * map.n_z as f64 / nz2 as f64 - 0.5;
        for t in 0..nt2 {
            let src_t = (t as f64 + 0.5) * map.n_theta as f64 / nt2 as f64 - 0.5;
            values[z * nt2 + t] = radius_at(map, src_t, src_z) - map.nominal_radius;
        }
    }
    let axis_center: Vec<(f64, f64)> = (0..nz2)
        .map(|z| slice_axis_center(map, (z as f64 + 0.5) * map.n_z as f64 / nz2 as f64 - 0.5))
        .collect();
    SurfaceMap::new(
        nt2,
        nz2,
        values,
        map.nominal_radius,
        map.z_spacing * map.n_z as f64 / nz2 as f64,
        axis_center,
    )
}

/// Rasterize the boundary: voxels with radius <= interpolated r(θ, z) from
/// the slice axis are solid, the rest exterior.
pub fn reroll(
    map: &SurfaceMap,
    dims: (usize, usize, usize),
    voxel_size: f64,
) -> Result<VoxelVolume, SurfaceError> {
    let needed = map.nominal_radius + map.max_abs();
    let max_center = map
        .axis_center
        .iter()
        .fold(0.0f64, |a, &(x, y)| a.max(x.abs()).max(y.abs()));
    let available = (dims.0.min(dims.1) as f64) * voxel_size;
    if needed + 1.0 > available || max_center + needed > available {
        return Err(SurfaceError::DoesNotFit { needed_um: needed + max_center, available_um: available });
    }
    let (nx, ny, nz) = dims;
    let mut vol = VoxelVolume::new(dims, voxel_size, vec![Phase::Exterior as u8; nx * ny * nz])
        .expect("valid dims");
    let two_pi = 2.0 * std::f64::consts::PI;
    for iz in 0..nz {
        let z_um = (iz as f64 + 0.5) * voxel_size;
        let row = z_um / map.z_spacing - 0.5;
        let (cx, cy) = slice_axis_center(map, row);
        for iy in 0..ny {
            let py = (iy as f64 + 0.5) * voxel_size - cy;
            for ix in 0..nx {
                let px = (ix as f64 + 0.5) * voxel_size - cx;
                let r = (px * px + py * py).sqrt();
                let theta = py.atan2(px).rem_euclid(two_pi);
                let t = theta / two_pi * map.n_theta as f64;
                if r <= radius_at(map, t, row) {
                    vol.set_phase(ix, iy, iz, Phase::Solid);
                }
            }
        }
    }
    Ok(vol)
}

#[derive(Serialize, Deserialize)]
struct MapHeader {
    n_theta: usize,
    n_z: usize,
    nominal_radius: f64,
    z_spacing: f64,
    axis_center: Vec<(f64, f64)>,
    data_file: String,
}

/// Write `<base>.json` + `<base>.f32` (little-endian f32, θ-fastest), plus
/// an optional PNG preview normalized to [min, max].
pub fn save_map(map: &SurfaceMap, base: &Path, png_preview: bool) -> Result<(), SurfaceError> {
    let raw_name = format!(
        "{}.f32",
        base.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "map".into())
    );
    let header = MapHeader {
        n_theta: map.n_theta,
        n_z: map.n_z,
        nominal_radius: map.nominal_radius,
        z_spacing: map.z_spacing,
        axis_center: map.axis_center.clone(),
        data_file: raw_name,
    };
    std::fs::write(base.with_extension("json"), serde_json::to_string_pretty(&header)?)?;
    let mut f = std::fs::File::create(base.with_extension("f32"))?;
    let mut buf = Vec::with_capacity(map.values.len() * 4);
    for &v in &map.values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    f.write_all(&buf)?;
    if png_preview {
        let (lo, hi) = map
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = (hi - lo).max(1e-12);
        let pixels: Vec<u8> = map
            .values
            .iter()
            .map(|&v| (255.0 * (v - lo) / span) as u8)
            .collect();
        let img = image::GrayImage::from_raw(map.n_theta as u32, map.n_z as u32, pixels)
            .expect("buffer sized to grid");
        img.save(base.with_extension("png")).map_err(|e| {
            SurfaceError::Io(std::io::Error::other(e))
        })?;
    }
    Ok(())
}

pub fn load_map(base: &Path) -> Result<SurfaceMap, SurfaceError> {
    let header: MapHeader = serde_json::from_str(&std::fs::read_to_string(base.with_extension("json"))?)?;
    let mut raw = Vec::new();
    std::fs::File::open(base.with_extension("f32"))?.read_to_end(&mut raw)?;
    let expected = header.n_theta * header.n_z;
    if raw.len() != expected * 4 {
        return Err(SurfaceError::RawLengthMismatch { got: raw.len() / 4, expected });
    }
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    SurfaceMap::new(
        header.n_theta,
        header.n_z,
        values,
        header.nominal_radius,
        header.z_spacing,
        header.axis_center,
    )
}
