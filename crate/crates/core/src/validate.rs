//! Quantitative comparison of generated realizations against ground truth:
//! univariate and bivariate metric distributions, projection scattering
//! transforms, and the precision/separation table.

use std::path::Path;

use serde::Serialize;

use crate::grid::Grid2;
use crate::metrics::PoreMetrics;
use crate::mst::{self, MstError, ScatteringCoeffs};
use crate::plot;
use crate::surface::{self, SurfaceMap};
use crate::voxel::{Phase, VoxelVolume};

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "KS needs nonempty samples");
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        let fa = i as f64 / sa.len() as f64;
        let fb = j as f64 / sb.len() as f64;
        d = d.max((fa - fb).abs());
    }
    d
}

/// The six metrics compared throughout validation.
pub const METRIC_NAMES: [&str; 6] = ["x", "y", "volume_um3", "anisotropy", "theta_z", "nn_um"];

pub fn metric_values(metrics: &[PoreMetrics], index: usize) -> Vec<f64> {
    metrics
        .iter()
        .filter_map(|m| match index {
            0 => Some(m.centroid_um.0),
            1 => Some(m.centroid_um.1),
            2 => Some(m.volume_um3),
            3 => Some(m.anisotropy),
            4 => Some(m.theta_z),
            5 => m.nn_distance_um,
            _ => None,
        })
        .collect()
}

/// Aligned normalized histograms over the combined range.
#[derive(Debug, Clone, Serialize)]
pub struct HistogramPair {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
    pub gt: Vec<f64>,
    pub gen: Vec<f64>,
}

fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0f64; bins];
    if values.is_empty() {
        return h;
    }
    let span = (hi - lo).max(1e-300);
    for &v in values {
        let b = (((v - lo) / span) * bins as f64) as usize;
        h[b.min(bins - 1)] += 1.0;
    }
    let total: f64 = h.iter().sum();
    for x in h.iter_mut() {
        *x /= total;
    }
    h
}

fn histogram_pair(gt: &[f64], gen: &[f64], bins: usize) -> HistogramPair {
    let lo = gt
        .iter()
        .chain(gen.iter())
        .fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = gt
        .iter()
        .chain(gen.iter())
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
    HistogramPair {
        lo,
        hi,
        bins,
        gt: histogram(gt, lo, hi, bins),
        gen: histogram(gen, lo, hi, bins),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UnivariateEntry {
    pub metric: String,
    pub ks: f64,
    pub hist: HistogramPair,
}

/// Two-sample KS plus aligned 64-bin histograms for each of the six metrics.
pub fn univariate_report(gt: &[PoreMetrics], gen: &[PoreMetrics]) -> Vec<UnivariateEntry> {
    (0..6)
        .filter_map(|idx| {
            let a = metric_values(gt, idx);
            let b = metric_values(gen, idx);
            if a.is_empty() || b.is_empty() {
                return None;
            }
            Some(UnivariateEntry {
                metric: METRIC_NAMES[idx].to_string(),
                ks: ks_statistic(&a, &b),
                hist: histogram_pair(&a, &b, 64),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct BivariateEntry {
    pub pair: (String, String),
    pub l1: f64,
    pub lo: (f64, f64),
    pub hi: (f64, f64),
    pub bins: usize,
    pub gt: Vec<f64>,
    pub gen: Vec<f64>,
    /// Contour levels at 5%..95% of the max in 10% steps.
    pub contour_levels_gt: Vec<f64>,
    pub contour_levels_gen: Vec<f64>,
}

fn histogram2d(
    xs: &[f64],
    ys: &[f64],
    lo: (f64, f64),
    hi: (f64, f64),
    bins: usize,
) -> Vec<f64> {
    let mut h = vec![0.0f64; bins * bins];
    let span = ((hi.0 - lo.0).max(1e-300), (hi.1 - lo.1).max(1e-300));
    for (&x, &y) in xs.iter().zip(ys.iter()) {
        let bx = (((x - lo.0) / span.0) * bins as f64) as usize;
        let by = (((y - lo.1) / span.1) * bins as f64) as usize;
        h[by.min(bins - 1) * bins + bx.min(bins - 1)] += 1.0;
    }
    let total: f64 = h.iter().sum::<f64>().max(1e-300);
    for v in h.iter_mut() {
        *v /= total;
    }
    h
}

/// Deterministic stand-in for the kernel-density smoothing used in the
/// reference plots: a fixed Gaussian blur over the binned mass. Without it
/// the L1 distance between 32^2 histograms is dominated by sampling noise
/// at realistic pore counts.
fn smooth2d(hist: &[f64], bins: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    // separable blur with edge truncation, renormalized per sample
    let mut tmp = vec![0.0f64; bins * bins];
    for r in 0..bins {
        for c in 0..bins {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (i, w) in kernel.iter().enumerate() {
                let cc = c as i64 + i as i64 - radius;
                if cc >= 0 && cc < bins as i64 {
                    acc += w * hist[r * bins + cc as usize];
                    wsum += w;
                }
            }
            tmp[r * bins + c] = acc / wsum;
        }
    }
    let mut out = vec![0.0f64; bins * bins];
    for c in 0..bins {
        for r in 0..bins {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (i, w) in kernel.iter().enumerate() {
                let rr = r as i64 + i as i64 - radius;
                if rr >= 0 && rr < bins as i64 {
                    acc += w * tmp[rr as usize * bins + c];
                    wsum += w;
                }
            }
            out[r * bins + c] = acc / wsum;
        }
    }
    let total: f64 = out.iter().sum::<f64>().max(1e-300);
    for v in out.iter_mut() {
        *v /= total;
    }
    out
}

fn contour_levels(hist: &[f64]) -> Vec<f64> {
    let max = hist.iter().cloned().fold(0.0f64, f64::max);
    (0..10).map(|k| (0.05 + 0.10 * k as f64) * max).collect()
}

/// 32x32 normalized 2D histograms per metric pair with L1 distances.
pub fn bivariate_report(
    gt: &[PoreMetrics],
    gen: &[PoreMetrics],
    pairs: &[(usize, usize)],
) -> Vec<BivariateEntry> {
    let bins = 32;
    pairs
        .iter()
        .filter_map(|&(i, j)| {
            let (gxi, gyi) = (metric_values(gt, i), metric_values(gt, j));
            let (hxi, hyi) = (metric_values(gen, i), metric_values(gen, j));
            if gxi.is_empty() || hxi.is_empty() || gxi.len() != gyi.len() || hxi.len() != hyi.len() {
                return None;
            }
            let lo = (
                gxi.iter().chain(hxi.iter()).fold(f64::INFINITY, |a, &b| a.min(b)),
                gyi.iter().chain(hyi.iter()).fold(f64::INFINITY, |a, &b| a.min(b)),
            );
            let hi = (
                gxi.iter().chain(hxi.iter()).fold(f64::NEG_INFINITY, |a, &b| a.max(b)),
                gyi.iter().chain(hyi.iter()).fold(f64::NEG_INFINITY, |a, &b| a.max(b)),
            );
            let hg = smooth2d(&histogram2d(&gxi, &gyi, lo, hi, bins), bins, 1.5);
            let hh = smooth2d(&histogram2d(&hxi, &hyi, lo, hi, bins), bins, 1.5);
            let l1 = hg.iter().zip(hh.iter()).map(|(a, b)| (a - b).abs()).sum();
            Some(BivariateEntry {
                pair: (METRIC_NAMES[i].to_string(), METRIC_NAMES[j].to_string()),
                l1,
                lo,
                hi,
                bins,
                contour_levels_gt: contour_levels(&hg),
                contour_levels_gen: contour_levels(&hh),
                gt: hg,
                gen: hh,
            })
        })
        .collect()
}

/// All ten metric pairs over (x, y, volume, anisotropy, theta_z).
pub fn default_pairs() -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..5 {
        for j in (i + 1)..5 {
            pairs.push((i, j));
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn all() -> [Axis; 3] {
        [Axis::X, Axis::Y, Axis::Z]
    }

    pub fn label(&self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

fn next_pow2(n: usize) -> usize {
    let mut p = 1;
    while p < n {
        p <<= 1;
    }
    p.max(16)
}

/// Pore-occupancy projection along `axis`, normalized to [0, 1] and
/// zero-padded to a power-of-two square.
pub fn pore_projection(part: &VoxelVolume, axis: Axis) -> Grid2 {
    let (nx, ny, nz) = part.dims();
    let (rows, cols) = match axis {
        Axis::X => (nz, ny),
        Axis::Y => (nz, nx),
        Axis::Z => (ny, nx),
    };
    let mut grid = Grid2::zeros(rows, cols);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if part.phase(x, y, z) != Phase::Pore {
                    continue;
                }
                let (r, c) = match axis {
                    Axis::X => (z, y),
                    Axis::Y => (z, x),
                    Axis::Z => (y, x),
                };
                grid.data[r * cols + c] += 1.0;
            }
        }
    }
    let max = grid.data.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for v in grid.data.iter_mut() {
            *v /= max;
        }
    }
    let side = next_pow2(rows.max(cols));
    let mut padded = Grid2::zeros(side, side);
    for r in 0..rows {
        for c in 0..cols {
            padded.set(r, c, grid.at(r, c));
        }
    }
    padded
}

/// 2D scattering transform of the pore projection.
pub fn projection_mst(part: &VoxelVolume, axis: Axis) -> Result<ScatteringCoeffs, MstError> {
    let padded = pore_projection(part, axis);
    let bank = mst::build_filter_bank(4, 4, padded.rows)?;
    mst::scatter2d(&padded, &bank)
}

/// Log-scattering vector of one part projection.
pub fn projection_log_coeffs(part: &VoxelVolume, axis: Axis) -> Result<Vec<f64>, MstError> {
    Ok(mst::log_coeffs(&projection_mst(part, axis)?, 1e-12))
}

/// Log-scattering vector of a surface map (resized to 256^2, demeaned).
pub fn surface_log_coeffs(map: &SurfaceMap) -> Result<Vec<f64>, MstError> {
    let resized = surface::resize(map, (256, 256)).map_err(|_| MstError::SizeMismatch {
        image: (map.n_theta, map.n_z),
        bank: 256,
    })?;
    let (dm, _) = surface::demean(&resized);
    let bank = mst::build_filter_bank(4, 4, 256)?;
    let grid = Grid2::from_vec(256, 256, dm.values);
    Ok(mst::log_coeffs(&mst::scatter2d(&grid, &bank)?, 1e-12))
}

#[derive(Debug, Clone, Serialize)]
pub struct PsRow {
    pub label: String,
    pub p_gt: f64,
    pub p_gen: f64,
    pub separation: f64,
}

/// Precision and separation per projection axis (plus surfaces when given),
/// mirroring the published table layout.
pub fn precision_separation_table(
    gt_parts: &[&VoxelVolume],
    gen_parts: &[&VoxelVolume],
    gt_surfaces: &[&SurfaceMap],
    gen_surfaces: &[&SurfaceMap],
) -> Result<Vec<PsRow>, MstError> {
    let mut rows = Vec::new();
    for axis in Axis::all() {
        let gt: Vec<Vec<f64>> = gt_parts
            .iter()
            .map(|p| projection_log_coeffs(p, axis))
            .collect::<Result<_, _>>()?;
        let gen: Vec<Vec<f64>> = gen_parts
            .iter()
            .map(|p| projection_log_coeffs(p, axis))
            .collect::<Result<_, _>>()?;
        rows.push(PsRow {
            label: format!("porosity_{}", axis.label()),
            p_gt: mst::precision(&gt)?,
            p_gen: mst::precision(&gen)?,
            separation: mst::separation(&gt, &gen)?,
        });
    }
    if gt_surfaces.len() >= 2 && gen_surfaces.len() >= 2 {
        let gt: Vec<Vec<f64>> = gt_surfaces
            .iter()
            .map(|m| surface_log_coeffs(m))
            .collect::<Result<_, _>>()?;
        let gen: Vec<Vec<f64>> = gen_surfaces
            .iter()
            .map(|m| surface_log_coeffs(m))
            .collect::<Result<_, _>>()?;
        rows.push(PsRow {
            label: "surface_roughness".into(),
            p_gt: mst::precision(&gt)?,
            p_gen: mst::precision(&gen)?,
            separation: mst::separation(&gt, &gen)?,
        });
    }
    Ok(rows)
}

/// Everything the validation stage produces for one gt/gen pairing.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub univariate: Vec<UnivariateEntry>,
    pub bivariate: Vec<BivariateEntry>,
    /// Mean log-scattering curves per axis: (gt, gen).
    pub mst_curves: Vec<(String, Vec<f64>, Vec<f64>)>,
    pub ps_table: Vec<PsRow>,
}

fn mean_vectors(vs: &[Vec<f64>]) -> Vec<f64> {
    let d = vs[0].len();
    let mut m = vec![0.0; d];
    for v in vs {
        for (mi, x) in m.iter_mut().zip(v.iter()) {
            *mi += x;
        }
    }
    for mi in m.iter_mut() {
        *mi /= vs.len() as f64;
    }
    m
}

/// Full report over pore metrics and part volumes.
pub fn compare(
    gt_metrics: &[PoreMetrics],
    gen_metrics: &[PoreMetrics],
    gt_parts: &[&VoxelVolume],
    gen_parts: &[&VoxelVolume],
    gt_surfaces: &[&SurfaceMap],
    gen_surfaces: &[&SurfaceMap],
) -> Result<ComparisonReport, MstError> {
    let univariate = univariate_report(gt_metrics, gen_metrics);
    let bivariate = bivariate_report(gt_metrics, gen_metrics, &default_pairs());
    let mut mst_curves = Vec::new();
    if !gt_parts.is_empty() && !gen_parts.is_empty() {
        for axis in Axis::all() {
            let gt: Vec<Vec<f64>> = gt_parts
                .iter()
                .map(|p| projection_log_coeffs(p, axis))
                .collect::<Result<_, _>>()?;
            let gen: Vec<Vec<f64>> = gen_parts
                .iter()
                .map(|p| projection_log_coeffs(p, axis))
                .collect::<Result<_, _>>()?;
            mst_curves.push((axis.label().to_string(), mean_vectors(&gt), mean_vectors(&gen)));
        }
    }
    let ps_table = if gt_parts.len() >= 2 && gen_parts.len() >= 2 {
        precision_separation_table(gt_parts, gen_parts, gt_surfaces, gen_surfaces)?
    } else {
        Vec::new()
    };
    Ok(ComparisonReport { univariate, bivariate, mst_curves, ps_table })
}

/// Report bundle: JSON summary, CSVs per figure analog, PNG quick-looks.
pub fn write_report(report: &ComparisonReport, dir: &Path) -> Result<(), std::io::Error> {
    std::fs::create_dir_all(dir)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        ks: std::collections::BTreeMap<&'a str, f64>,
        bivariate_l1: std::collections::BTreeMap<String, f64>,
        ps_table: &'a [PsRow],
    }
    let summary = Summary {
        ks: report
            .univariate
            .iter()
            .map(|e| (e.metric.as_str(), e.ks))
            .collect(),
        bivariate_l1: report
            .bivariate
            .iter()
            .map(|e| (format!("{}__{}", e.pair.0, e.pair.1), e.l1))
            .collect(),
        ps_table: &report.ps_table,
    };
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(std::io::Error::other)?,
    )?;

    for e in &report.univariate {
        let mut w = csv::Writer::from_path(dir.join(format!("univariate_{}.csv", e.metric)))
            .map_err(std::io::Error::other)?;
        w.write_record(["bin_center", "gt_mass", "gen_mass"]).map_err(std::io::Error::other)?;
        for b in 0..e.hist.bins {
            let center = e.hist.lo + (b as f64 + 0.5) * (e.hist.hi - e.hist.lo) / e.hist.bins as f64;
            w.write_record([
                format!("{center:.6}"),
                format!("{:.9}", e.hist.gt[b]),
                format!("{:.9}", e.hist.gen[b]),
            ])
            .map_err(std::io::Error::other)?;
        }
        w.flush()?;
        plot::plot_histogram_pair(
            &dir.join(format!("univariate_{}.png", e.metric)),
            &e.hist.gt,
            &e.hist.gen,
        )?;
    }

    for e in &report.bivariate {
        let name = format!("bivariate_{}__{}", e.pair.0, e.pair.1);
        let mut w = csv::Writer::from_path(dir.join(format!("{name}.csv")))
            .map_err(std::io::Error::other)?;
        w.write_record(["bx", "by", "gt_mass", "gen_mass"]).map_err(std::io::Error::other)?;
        for by in 0..e.bins {
            for bx in 0..e.bins {
                w.write_record([
                    bx.to_string(),
                    by.to_string(),
                    format!("{:.9}", e.gt[by * e.bins + bx]),
                    format!("{:.9}", e.gen[by * e.bins + bx]),
                ])
                .map_err(std::io::Error::other)?;
            }
        }
        w.flush()?;
        let mut lv = csv::Writer::from_path(dir.join(format!("{name}_contours.csv")))
            .map_err(std::io::Error::other)?;
        lv.write_record(["level_index", "gt_level", "gen_level"]).map_err(std::io::Error::other)?;
        for (i, (a, b)) in e
            .contour_levels_gt
            .iter()
            .zip(e.contour_levels_gen.iter())
            .enumerate()
        {
            lv.write_record([i.to_string(), format!("{a:.9}"), format!("{b:.9}")])
                .map_err(std::io::Error::other)?;
        }
        lv.flush()?;
    }

    for (axis, gt, gen) in &report.mst_curves {
        let mut w = csv::Writer::from_path(dir.join(format!("mst_projection_{axis}.csv")))
            .map_err(std::io::Error::other)?;
        w.write_record(["path_index", "gt_log", "gen_log"]).map_err(std::io::Error::other)?;
        for (i, (a, b)) in gt.iter().zip(gen.iter()).enumerate() {
            w.write_record([i.to_string(), format!("{a:.9}"), format!("{b:.9}")])
                .map_err(std::io::Error::other)?;
        }
        w.flush()?;
        plot::plot_series(
            &dir.join(format!("mst_projection_{axis}.png")),
            &[(gt, plot::BLUE), (gen, plot::RED)],
        )?;
    }

    if !report.ps_table.is_empty() {
        let mut w = csv::Writer::from_path(dir.join("precision_separation.csv"))
            .map_err(std::io::Error::other)?;
        w.write_record(["metric", "p_gt", "p_gen", "separation"]).map_err(std::io::Error::other)?;
        for row in &report.ps_table {
            w.write_record([
                row.label.clone(),
                format!("{:.6e}", row.p_gt),
                format!("{:.6e}", row.p_gen),
                format!("{:.6e}", row.separation),
            ])
            .map_err(std::io::Error::other)?;
        }
        w.flush()?;
    }
    Ok(())
}
