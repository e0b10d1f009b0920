//! Binned conditional probability model of pore properties over the part
//! cross-section, and the sampler that turns it into pore specifications.
//!
//! Pores are binned by centroid in (x, y); each bin carries a count rate per
//! micrometer of build height and empirical property distributions sampled
//! by inverse transform with linear CDF interpolation.

use std::path::Path;

use rand::Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::metrics::PoreMetrics;

#[derive(Debug, thiserror::Error)]
pub enum SpatialError {
    #[error("no pores to fit")]
    NoPores,
    #[error("n_bins must be >= 1")]
    NoBins,
    #[error("bin index {0} out of range {1}")]
    BadBin(usize, usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Cylindrical part envelope in part coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartGeometry {
    pub center_um: (f64, f64),
    pub diameter_um: f64,
    pub length_um: f64,
}

/// Sorted empirical sample arrays per property.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinDistributions {
    pub volume_um3: Vec<f64>,
    pub anisotropy: Vec<f64>,
    pub theta_z: Vec<f64>,
}

impl BinDistributions {
    fn from_metrics(metrics: &[&PoreMetrics]) -> BinDistributions {
        let mut volume: Vec<f64> = metrics.iter().map(|m| m.volume_um3).collect();
        let mut anisotropy: Vec<f64> = metrics.iter().map(|m| m.anisotropy).collect();
        let mut theta: Vec<f64> = metrics.iter().map(|m| m.theta_z).collect();
        for v in [&mut volume, &mut anisotropy, &mut theta] {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }
        BinDistributions { volume_um3: volume, anisotropy, theta_z: theta }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinModel {
    /// Pores per micrometer of build height.
    pub rate_per_um: f64,
    /// Fraction of the bin square inside the part circle (0 = exterior bin).
    pub interior_fraction: f64,
    /// Empirical distributions; `None` falls back to the global ones.
    pub dists: Option<BinDistributions>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpatialModel {
    pub n_bins: usize,
    pub geometry: PartGeometry,
    pub bin_width_um: f64,
    pub origin_um: (f64, f64),
    pub bins: Vec<BinModel>,
    pub global: BinDistributions,
}

/// Target properties and location for one pore to place.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoreSpec {
    pub volume_um3: f64,
    pub anisotropy: f64,
    pub theta_z: f64,
    pub location_um: (f64, f64, f64),
    pub bin: usize,
}

fn interior_fraction(
    origin: (f64, f64),
    bin_width: f64,
    ix: usize,
    iy: usize,
    center: (f64, f64),
    radius: f64,
) -> f64 {
    let mut inside = 0usize;
    let n = 8;
    for sy in 0..n {
        for sx in 0..n {
            let x = origin.0 + (ix as f64 + (sx as f64 + 0.5) / n as f64) * bin_width;
            let y = origin.1 + (iy as f64 + (sy as f64 + 0.5) / n as f64) * bin_width;
            let dx = x - center.0;
            let dy = y - center.1;
            if dx * dx + dy * dy <= radius * radius {
                inside += 1;
            }
        }
    }
    inside as f64 / (n * n) as f64
}

/// Bin pores by centroid and build per-bin rates and distributions.
pub fn fit(
    metrics: &[PoreMetrics],
    geometry: &PartGeometry,
    n_bins: usize,
) -> Result<SpatialModel, SpatialError> {
    if metrics.is_empty() {
        return Err(SpatialError::NoPores);
    }
    if n_bins == 0 {
        return Err(SpatialError::NoBins);
    }
    let bin_width = geometry.diameter_um / n_bins as f64;
    let origin = (
        geometry.center_um.0 - geometry.diameter_um / 2.0,
        geometry.center_um.1 - geometry.diameter_um / 2.0,
    );
    let radius = geometry.diameter_um / 2.0;

    let bin_of = |x: f64, y: f64| -> usize {
        let ix = (((x - origin.0) / bin_width).floor() as i64).clamp(0, n_bins as i64 - 1) as usize;
        let iy = (((y - origin.1) / bin_width).floor() as i64).clamp(0, n_bins as i64 - 1) as usize;
        iy * n_bins + ix
    };

    let mut per_bin: Vec<Vec<&PoreMetrics>> = vec![Vec::new(); n_bins * n_bins];
    for m in metrics {
        per_bin[bin_of(m.centroid_um.0, m.centroid_um.1)].push(m);
    }

    let global = BinDistributions::from_metrics(&metrics.iter().collect::<Vec<_>>());
    let mut bins = Vec::with_capacity(n_bins * n_bins);
    for iy in 0..n_bins {
        for ix in 0..n_bins {
            let idx = iy * n_bins + ix;
            let frac = interior_fraction(origin, bin_width, ix, iy, geometry.center_um, radius);
            let members = &per_bin[idx];
            bins.push(BinModel {
                rate_per_um: members.len() as f64 / geometry.length_um,
                interior_fraction: frac,
                dists: if members.is_empty() {
                    None
                } else {
                    Some(BinDistributions::from_metrics(members))
                },
            });
        }
    }
    Ok(SpatialModel {
        n_bins,
        geometry: geometry.clone(),
        bin_width_um: bin_width,
        origin_um: origin,
        bins,
        global,
    })
}

/// Poisson draw of pore counts per bin for a window of height `window_dz`.
pub fn sample_counts(model: &SpatialModel, window_dz: f64, rng: &mut impl Rng) -> Vec<u32> {
    model
        .bins
        .iter()
        .map(|b| {
            let lambda = b.rate_per_um * window_dz;
            if lambda <= 0.0 {
                0
            } else {
                let p = Poisson::new(lambda).expect("positive lambda");
                rng.sample(p) as u32
            }
        })
        .collect()
}

/// Inverse-transform sample from a sorted empirical array with linear CDF
/// interpolation between order statistics.
pub fn inverse_cdf_sample(sorted: &[f64], u: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0],
        m => {
            let pos = u.clamp(0.0, 1.0) * (m - 1) as f64;
            let lo = (pos.floor() as usize).min(m - 2);
            let f = pos - lo as f64;
            sorted[lo] + f * (sorted[lo + 1] - sorted[lo])
        }
    }
}

impl SpatialModel {
    pub fn bin_center(&self, bin: usize) -> (f64, f64) {
        let ix = bin % self.n_bins;
        let iy = bin / self.n_bins;
        (
            self.origin_um.0 + (ix as f64 + 0.5) * self.bin_width_um,
            self.origin_um.1 + (iy as f64 + 0.5) * self.bin_width_um,
        )
    }

    fn point_interior(&self, x: f64, y: f64) -> bool {
        let dx = x - self.geometry.center_um.0;
        let dy = y - self.geometry.center_um.1;
        let r = self.geometry.diameter_um / 2.0;
        dx * dx + dy * dy <= r * r
    }

    fn distributions_for(&self, bin: usize) -> &BinDistributions {
        self.bins[bin].dists.as_ref().unwrap_or(&self.global)
    }
}

/// Draw one pore specification from a bin's distributions; location uniform
/// over the bin ∩ part interior, z uniform over [z0, z0 + dz).
pub fn sample_spec(
    model: &SpatialModel,
    bin: usize,
    z_range: (f64, f64),
    rng: &mut impl Rng,
) -> Result<PoreSpec, SpatialError> {
    if bin >= model.bins.len() {
        return Err(SpatialError::BadBin(bin, model.bins.len()));
    }
    let dists = model.distributions_for(bin);
    let volume = inverse_cdf_sample(&dists.volume_um3, rng.random::<f64>());
    let anisotropy = inverse_cdf_sample(&dists.anisotropy, rng.random::<f64>());
    let theta = inverse_cdf_sample(&dists.theta_z, rng.random::<f64>());

    let ix = bin % model.n_bins;
    let iy = bin / model.n_bins;
    let bx = model.origin_um.0 + ix as f64 * model.bin_width_um;
    let by = model.origin_um.1 + iy as f64 * model.bin_width_um;
    let mut location = None;
    for _ in 0..1000 {
        let x = bx + rng.random::<f64>() * model.bin_width_um;
        let y = by + rng.random::<f64>() * model.bin_width_um;
        if model.point_interior(x, y) {
            location = Some((x, y));
            break;
        }
    }
    let (x, y) = location.unwrap_or_else(|| {
        // clamp the bin center radially into the interior
        let (cx, cy) = model.bin_center(bin);
        let dx = cx - model.geometry.center_um.0;
        let dy = cy - model.geometry.center_um.1;
        let r = (dx * dx + dy * dy).sqrt();
        let r_max = model.geometry.diameter_um / 2.0 * 0.999;
        if r <= r_max {
            (cx, cy)
        } else {
            (
                model.geometry.center_um.0 + dx / r * r_max,
                model.geometry.center_um.1 + dy / r * r_max,
            )
        }
    });
    let z = z_range.0 + rng.random::<f64>() * z_range.1;
    Ok(PoreSpec { volume_um3: volume, anisotropy, theta_z: theta, location_um: (x, y, z), bin })
}

/// JSON model file (rates and property arrays are inspectable/editable).
pub fn save_model(model: &SpatialModel, path: &Path) -> Result<(), SpatialError> {
    std::fs::write(path, serde_json::to_string_pretty(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SpatialModel, SpatialError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
