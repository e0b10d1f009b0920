//! Part assembly: match sampled pore specifications against the bank, place
//! them with an overlap-safe local component check, traverse long parts
//! with a half-overlapping moving window, and clip against the boundary.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::gan::PoreBank;
use crate::metrics::PoreMetrics;
use crate::spatial::{self, PoreSpec, SpatialModel};
use crate::voxel::{Connectivity, Phase, Pore, VoxelVolume, MIN_PORE_VOXELS};

#[derive(Debug, thiserror::Error)]
pub enum AssembleError {
    #[error("pore bank is empty")]
    EmptyBank,
    #[error("window of {got} voxels is below the 4-voxel minimum")]
    WindowTooSmall { got: usize },
    #[error(transparent)]
    Spatial(#[from] spatial::SpatialError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Population standard deviations used to normalize match distances.
#[derive(Debug, Clone, Serialize)]
pub struct MatchNorm {
    pub volume_std: f64,
    pub anisotropy_std: f64,
    pub theta_std: f64,
}

impl MatchNorm {
    pub fn from_metrics(metrics: &[PoreMetrics]) -> MatchNorm {
        let std = |vals: Vec<f64>| -> f64 {
            let n = vals.len() as f64;
            if n < 2.0 {
                return 1.0;
            }
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            var.sqrt().max(1e-12)
        };
        MatchNorm {
            volume_std: std(metrics.iter().map(|m| m.volume_um3).collect()),
            anisotropy_std: std(metrics.iter().map(|m| m.anisotropy).collect()),
            theta_std: std(metrics.iter().map(|m| m.theta_z).collect()),
        }
    }
}

/// Bank pore minimizing normalized Euclidean distance in
/// (volume, anisotropy, theta_z); ties break toward the lowest bank id.
pub fn match_pore<'b>(
    spec: &PoreSpec,
    bank: &'b PoreBank,
    norm: &MatchNorm,
) -> Result<(usize, &'b Pore), AssembleError> {
    if bank.is_empty() {
        return Err(AssembleError::EmptyBank);
    }
    let mut best = (0usize, f64::INFINITY);
    for (i, m) in bank.metrics.iter().enumerate() {
        let dv = (m.volume_um3 - spec.volume_um3) / norm.volume_std;
        let da = (m.anisotropy - spec.anisotropy) / norm.anisotropy_std;
        let dt = (m.theta_z - spec.theta_z) / norm.theta_std;
        let d = dv * dv + da * da + dt * dt;
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok((best.0, &bank.pores[best.0]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum PlacementStatus {
    Placed,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct LedgerEntry {
    pub bank_id: usize,
    pub location_um: (f64, f64, f64),
    pub status: PlacementStatus,
    pub retries: u32,
    #[serde(skip)]
    pub voxels: Vec<usize>,
}

/// Assembled part: the voxel volume plus the placement ledger.
#[derive(Debug, Clone)]
pub struct PartRealization {
    pub volume: VoxelVolume,
    pub ledger: Vec<LedgerEntry>,
}

impl PartRealization {
    pub fn placed_count(&self) -> usize {
        self.ledger.iter().filter(|e| e.status == PlacementStatus::Placed).count()
    }
}

/// Result of one placement attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlaceOutcome {
    /// Stamped voxel indices (flat) of the accepted pore.
    Placed(Vec<usize>),
    /// Placement would merge with or touch existing pores, or leave the
    /// interior; the volume is untouched.
    Rejected,
}

/// Connected pore components intersecting a window, flood-filled locally.
fn window_components(
    volume: &VoxelVolume,
    lo: (i64, i64, i64),
    hi: (i64, i64, i64),
) -> usize {
    let (nx, ny, nz) = volume.dims();
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let (x0, y0, z0) = (clamp(lo.0, nx), clamp(lo.1, ny), clamp(lo.2, nz));
    let (x1, y1, z1) = (clamp(hi.0, nx), clamp(hi.1, ny), clamp(hi.2, nz));
    let w = (x1 - x0 + 1, y1 - y0 + 1, z1 - z0 + 1);
    let mut seen = vec![false; w.0 * w.1 * w.2];
    let idx = |x: usize, y: usize, z: usize| (x - x0) + w.0 * ((y - y0) + w.1 * (z - z0));
    let mut count = 0;
    let mut stack = Vec::new();
    for z in z0..=z1 {
        for y in y0..=y1 {
            for x in x0..=x1 {
                if volume.phase(x, y, z) != Phase::Pore || seen[idx(x, y, z)] {
                    continue;
                }
                count += 1;
                seen[idx(x, y, z)] = true;
                stack.push((x, y, z));
                while let Some((cx, cy, cz)) = stack.pop() {
                    for dz in -1i64..=1 {
                        for dy in -1i64..=1 {
                            for dx in -1i64..=1 {
                                if (dx, dy, dz) == (0, 0, 0) {
                                    continue;
                                }
                                let (ax, ay, az) =
                                    (cx as i64 + dx, cy as i64 + dy, cz as i64 + dz);
                                if ax < x0 as i64
                                    || ay < y0 as i64
                                    || az < z0 as i64
                                    || ax > x1 as i64
                                    || ay > y1 as i64
                                    || az > z1 as i64
                                {
                                    continue;
                                }
                                let (ax, ay, az) = (ax as usize, ay as usize, az as usize);
                                if volume.phase(ax, ay, az) == Phase::Pore && !seen[idx(ax, ay, az)] {
                                    seen[idx(ax, ay, az)] = true;
                                    stack.push((ax, ay, az));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    count
}

fn round_to_i64(x: f64) -> i64 {
    x.round() as i64
}

/// Stamp the pore with its centroid at `location_um`; accept only when the
/// pore-component count of the stamped bounding box dilated by one voxel
/// increases by exactly one. On rejection the volume is restored bit-exactly.
pub fn place_pore(
    volume: &mut VoxelVolume,
    pore: &Pore,
    location_um: (f64, f64, f64),
) -> PlaceOutcome {
    let vs = volume.voxel_size();
    let (nx, ny, nz) = volume.dims();
    let c = pore.local_centroid();
    let origin = (
        round_to_i64(location_um.0 / vs - c.0),
        round_to_i64(location_um.1 / vs - c.1),
        round_to_i64(location_um.2 / vs - c.2),
    );
    let ext = pore.extent();
    // target voxels must be inside the grid and inside the part interior
    let mut targets = Vec::with_capacity(pore.voxels.len());
    for &(x, y, z) in &pore.voxels {
        let (tx, ty, tz) = (origin.0 + x as i64, origin.1 + y as i64, origin.2 + z as i64);
        if tx < 0 || ty < 0 || tz < 0 || tx >= nx as i64 || ty >= ny as i64 || tz >= nz as i64 {
            return PlaceOutcome::Rejected;
        }
        let (tx, ty, tz) = (tx as usize, ty as usize, tz as usize);
        if volume.phase(tx, ty, tz) == Phase::Exterior {
            return PlaceOutcome::Rejected;
        }
        targets.push(volume.index(tx, ty, tz));
    }
    let lo = (origin.0 - 1, origin.1 - 1, origin.2 - 1);
    let hi = (
        origin.0 + ext.0 as i64,
        origin.1 + ext.1 as i64,
        origin.2 + ext.2 as i64,
    );
    let before = window_components(volume, lo, hi);
    // tentative stamp, remembering actual changes for bit-exact restore
    let mut changed = Vec::with_capacity(targets.len());
    for &t in &targets {
        if volume.phase_raw(t) == Phase::Solid as u8 {
            volume.set_phase_raw(t, Phase::Pore);
            changed.push(t);
        }
    }
    let after = window_components(volume, lo, hi);
    if after == before + 1 && changed.len() == targets.len() {
        PlaceOutcome::Placed(targets)
    } else {
        for &t in changed.iter() {
            volume.set_phase_raw(t, Phase::Solid);
        }
        PlaceOutcome::Rejected
    }
}

/// Half-overlapping moving window over the build axis: advances by half
/// its length; each window owns the pores whose centroid slab is its first
/// half, so no pore is counted twice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovingWindow {
    pub z0_um: f64,
    pub zf_um: f64,
}

impl MovingWindow {
    /// Windows covering [0, length_um) advancing by dz/2.
    pub fn sequence(length_um: f64, dz_um: f64) -> Vec<MovingWindow> {
        let half = dz_um / 2.0;
        let n = (length_um / half).ceil() as usize;
        (0..n.max(1))
            .map(|w| MovingWindow { z0_um: w as f64 * half, zf_um: w as f64 * half + dz_um })
            .collect()
    }

    /// The half-slab this window owns.
    pub fn owned_slab(&self) -> (f64, f64) {
        (self.z0_um, (self.zf_um - self.z0_um) / 2.0)
    }
}

#[derive(Debug, Clone)]
pub struct AssembleConfig {
    /// Moving-window length in voxels (advance is half of this).
    pub window_dz_voxels: usize,
    /// Location retries per pore before it is skipped.
    pub retries: u32,
    pub seed: u64,
}

impl Default for AssembleConfig {
    fn default() -> Self {
        AssembleConfig { window_dz_voxels: 256, retries: 100, seed: 0 }
    }
}

fn slab_rng(seed: u64, slab: usize, bin: usize) -> ChaCha8Rng {
    let mix = (slab as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (bin as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ seed;
    ChaCha8Rng::seed_from_u64(mix)
}

/// Assemble a part inside `boundary` (a re-rolled surface volume: solid
/// interior, exterior elsewhere). The part is traversed in half-window
/// slabs; each (slab, bin) pair owns an independent seeded random stream,
/// so a windowed traversal and a whole-part traversal produce identical
/// ledgers for the same seed.
pub fn traverse(
    model: &SpatialModel,
    bank: &PoreBank,
    norm: &MatchNorm,
    boundary: &VoxelVolume,
    cfg: &AssembleConfig,
) -> Result<PartRealization, AssembleError> {
    traverse_impl(model, bank, norm, boundary, cfg, false)
}

/// Reference assembly: identical sampling and ordering, but every accept
/// decision recounts components by full relabeling of the whole volume
/// instead of the local dilated-window check. Ledger-identical to
/// [`traverse`] by construction of the overlap test.
pub fn traverse_reference(
    model: &SpatialModel,
    bank: &PoreBank,
    norm: &MatchNorm,
    boundary: &VoxelVolume,
    cfg: &AssembleConfig,
) -> Result<PartRealization, AssembleError> {
    traverse_impl(model, bank, norm, boundary, cfg, true)
}

fn place_pore_global(
    volume: &mut VoxelVolume,
    pore: &Pore,
    location_um: (f64, f64, f64),
) -> PlaceOutcome {
    let before = component_count(volume);
    let vs = volume.voxel_size();
    let (nx, ny, nz) = volume.dims();
    let c = pore.local_centroid();
    let origin = (
        round_to_i64(location_um.0 / vs - c.0),
        round_to_i64(location_um.1 / vs - c.1),
        round_to_i64(location_um.2 / vs - c.2),
    );
    let mut targets = Vec::with_capacity(pore.voxels.len());
    for &(x, y, z) in &pore.voxels {
        let (tx, ty, tz) = (origin.0 + x as i64, origin.1 + y as i64, origin.2 + z as i64);
        if tx < 0 || ty < 0 || tz < 0 || tx >= nx as i64 || ty >= ny as i64 || tz >= nz as i64 {
            return PlaceOutcome::Rejected;
        }
        let (tx, ty, tz) = (tx as usize, ty as usize, tz as usize);
        if volume.phase(tx, ty, tz) == Phase::Exterior {
            return PlaceOutcome::Rejected;
        }
        targets.push(volume.index(tx, ty, tz));
    }
    let mut changed = Vec::with_capacity(targets.len());
    for &t in &targets {
        if volume.phase_raw(t) == Phase::Solid as u8 {
            volume.set_phase_raw(t, Phase::Pore);
            changed.push(t);
        }
    }
    let after = component_count(volume);
    if after == before + 1 && changed.len() == targets.len() {
        PlaceOutcome::Placed(targets)
    } else {
        for &t in changed.iter() {
            volume.set_phase_raw(t, Phase::Solid);
        }
        PlaceOutcome::Rejected
    }
}

fn traverse_impl(
    model: &SpatialModel,
    bank: &PoreBank,
    norm: &MatchNorm,
    boundary: &VoxelVolume,
    cfg: &AssembleConfig,
    global_check: bool,
) -> Result<PartRealization, AssembleError> {
    if bank.is_empty() {
        return Err(AssembleError::EmptyBank);
    }
    if cfg.window_dz_voxels < 4 {
        return Err(AssembleError::WindowTooSmall { got: cfg.window_dz_voxels });
    }
    let mut volume = boundary.clone();
    let (_, _, nz) = volume.dims();
    let vs = volume.voxel_size();
    let half = (cfg.window_dz_voxels / 2).max(2);
    let length_um = nz as f64 * vs;
    let dz_um = (2 * half) as f64 * vs;
    let mut ledger = Vec::new();

    for (slab, window) in MovingWindow::sequence(length_um, dz_um).iter().enumerate() {
        let (z0_um, slab_dz) = window.owned_slab();
        let slab_dz = slab_dz.min(length_um - z0_um);
        if slab_dz <= 0.0 {
            break;
        }
        for bin in 0..model.bins.len() {
            if model.bins[bin].rate_per_um <= 0.0 {
                continue;
            }
            let mut rng = slab_rng(cfg.seed, slab, bin);
            let count = {
                let lambda = model.bins[bin].rate_per_um * slab_dz;
                let p = rand_distr::Poisson::new(lambda).expect("positive rate");
                rand::Rng::sample(&mut rng, p) as u32
            };
            for _ in 0..count {
                let spec = spatial::sample_spec(model, bin, (z0_um, slab_dz), &mut rng)?;
                let (bank_id, pore) = match_pore(&spec, bank, norm)?;
                // a pore taller than the half-window cannot be owned by one
                // window; skip it in every traversal mode alike
                if pore.extent().2 > half {
                    ledger.push(LedgerEntry {
                        bank_id,
                        location_um: spec.location_um,
                        status: PlacementStatus::Skipped,
                        retries: 0,
                        voxels: Vec::new(),
                    });
                    continue;
                }
                let mut location = spec.location_um;
                let mut placed = None;
                let mut retries = 0u32;
                loop {
                    let outcome = if global_check {
                        place_pore_global(&mut volume, pore, location)
                    } else {
                        place_pore(&mut volume, pore, location)
                    };
                    match outcome {
                        PlaceOutcome::Placed(voxels) => {
                            placed = Some(voxels);
                            break;
                        }
                        PlaceOutcome::Rejected => {
                            if retries >= cfg.retries {
                                break;
                            }
                            retries += 1;
                            let fresh = spatial::sample_spec(model, bin, (z0_um, slab_dz), &mut rng)?;
                            location = fresh.location_um;
                        }
                    }
                }
                ledger.push(match placed {
                    Some(voxels) => LedgerEntry {
                        bank_id,
                        location_um: location,
                        status: PlacementStatus::Placed,
                        retries,
                        voxels,
                    },
                    None => LedgerEntry {
                        bank_id,
                        location_um: spec.location_um,
                        status: PlacementStatus::Skipped,
                        retries,
                        voxels: Vec::new(),
                    },
                });
            }
        }
    }
    Ok(PartRealization { volume, ledger })
}

/// Clip pore voxels outside the boundary mask to exterior; dissolve pore
/// fragments under the 8-voxel floor back to solid; keep only the largest
/// fragment of any pore the boundary split.
pub fn clip_to_boundary(part: &mut PartRealization, boundary: &VoxelVolume) {
    assert_eq!(part.volume.dims(), boundary.dims());
    let n = part.volume.data().len();
    for i in 0..n {
        if boundary.phase_raw(i) == Phase::Exterior as u8
            && part.volume.phase_raw(i) != Phase::Exterior as u8
        {
            part.volume.set_phase_raw(i, Phase::Exterior);
        }
    }
    let dims = part.volume.dims();
    let (nx, ny) = (dims.0, dims.1);
    let neighbors26 = {
        let mut v = Vec::new();
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if (dx, dy, dz) != (0, 0, 0) {
                        v.push((dx, dy, dz));
                    }
                }
            }
        }
        v
    };
    let mut retained = Vec::new();
    for mut entry in std::mem::take(&mut part.ledger) {
        if entry.status != PlacementStatus::Placed {
            retained.push(entry);
            continue;
        }
        let survivors: Vec<usize> = entry
            .voxels
            .iter()
            .copied()
            .filter(|&i| part.volume.phase_raw(i) == Phase::Pore as u8)
            .collect();
        if survivors.is_empty() {
            continue; // fully outside the boundary; drop from the ledger
        }
        // split handling: flood-fill survivor fragments, keep the largest
        let set: std::collections::HashSet<usize> = survivors.iter().copied().collect();
        let mut seen = std::collections::HashSet::new();
        let mut fragments: Vec<Vec<usize>> = Vec::new();
        for &start in &survivors {
            if seen.contains(&start) {
                continue;
            }
            let mut frag = vec![start];
            seen.insert(start);
            let mut stack = vec![start];
            while let Some(i) = stack.pop() {
                let x = (i % nx) as i64;
                let y = ((i / nx) % ny) as i64;
                let z = (i / (nx * ny)) as i64;
                for &(dx, dy, dz) in &neighbors26 {
                    let (ax, ay, az) = (x + dx, y + dy, z + dz);
                    if ax < 0
                        || ay < 0
                        || az < 0
                        || ax >= dims.0 as i64
                        || ay >= dims.1 as i64
                        || az >= dims.2 as i64
                    {
                        continue;
                    }
                    let j = ax as usize + nx * (ay as usize + ny * az as usize);
                    if set.contains(&j) && !seen.contains(&j) {
                        seen.insert(j);
                        frag.push(j);
                        stack.push(j);
                    }
                }
            }
            fragments.push(frag);
        }
        fragments.sort_by_key(|f| std::cmp::Reverse(f.len()));
        let mut kept = None;
        for (fi, frag) in fragments.into_iter().enumerate() {
            if fi == 0 && frag.len() >= MIN_PORE_VOXELS {
                kept = Some(frag);
            } else {
                for i in frag {
                    part.volume.set_phase_raw(i, Phase::Solid);
                }
            }
        }
        match kept {
            Some(voxels) => {
                entry.voxels = voxels;
                retained.push(entry);
            }
            None => {} // dissolved entirely
        }
    }
    part.ledger = retained;
}

/// Ledger export: one row per attempted placement.
pub fn write_ledger_csv(part: &PartRealization, path: &Path) -> Result<(), AssembleError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bank_id", "x", "y", "z", "status", "retries"])?;
    for e in &part.ledger {
        w.write_record([
            e.bank_id.to_string(),
            format!("{:.3}", e.location_um.0),
            format!("{:.3}", e.location_um.1),
            format!("{:.3}", e.location_um.2),
            match e.status {
                PlacementStatus::Placed => "placed".to_string(),
                PlacementStatus::Skipped => "skipped".to_string(),
            },
            e.retries.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Full relabeling of the volume's pore phase; used by invariant checks.
pub fn component_count(volume: &VoxelVolume) -> usize {
    crate::voxel::label_components(volume, Connectivity::Full26).n_components()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::PoreBank;
    use crate::metrics::metrics_for;
    use crate::spatial::PartGeometry;

    fn ball_pore(radius: f64) -> Pore {
        crate::metrics::test_support::rasterized_ellipsoid(radius, radius, [0.0, 0.0, 1.0])
    }

    fn rod_pore(len: u32) -> Pore {
        Pore {
            voxels: (0..len).map(|i| (i, 0, 0)).collect(),
            bbox_origin: (0, 0, 0),
            voxel_size: 4.0,
        }
    }

    fn tiny_bank() -> (PoreBank, MatchNorm) {
        let pores = vec![ball_pore(1.6), ball_pore(2.6), rod_pore(9)];
        let metrics: Vec<_> = pores.iter().map(|p| metrics_for(p).unwrap()).collect();
        let norm = MatchNorm::from_metrics(&metrics);
        (PoreBank::from_ground_truth(pores, metrics), norm)
    }

    fn spec_like(m: &crate::metrics::PoreMetrics, location: (f64, f64, f64)) -> PoreSpec {
        PoreSpec {
            volume_um3: m.volume_um3,
            anisotropy: m.anisotropy,
            theta_z: m.theta_z,
            location_um: location,
            bin: 0,
        }
    }

    #[test]
    fn match_exact_and_singleton() {
        let (bank, norm) = tiny_bank();
        for i in 0..bank.len() {
            let spec = spec_like(&bank.metrics[i], (0.0, 0.0, 0.0));
            let (id, _) = match_pore(&spec, &bank, &norm).unwrap();
            assert_eq!(id, i);
        }
        let single = PoreBank::from_ground_truth(
            vec![bank.pores[1].clone()],
            vec![bank.metrics[1].clone()],
        );
        let spec = spec_like(&bank.metrics[0], (0.0, 0.0, 0.0));
        assert_eq!(match_pore(&spec, &single, &norm).unwrap().0, 0);
    }

    #[test]
    fn match_agrees_with_brute_force_oracle() {
        use rand::{Rng, SeedableRng};
        let (bank, norm) = tiny_bank();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let spec = PoreSpec {
                volume_um3: rng.random_range(50.0..6000.0),
                anisotropy: rng.random_range(0.0..1.0),
                theta_z: rng.random_range(0.0..90.0),
                location_um: (0.0, 0.0, 0.0),
                bin: 0,
            };
            let (got, _) = match_pore(&spec, &bank, &norm).unwrap();
            // oracle: compute all distances, stable sort, take first
            let mut dists: Vec<(usize, f64)> = bank
                .metrics
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let dv = (m.volume_um3 - spec.volume_um3) / norm.volume_std;
                    let da = (m.anisotropy - spec.anisotropy) / norm.anisotropy_std;
                    let dt = (m.theta_z - spec.theta_z) / norm.theta_std;
                    (i, (dv * dv + da * da + dt * dt).sqrt())
                })
                .collect();
            dists.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            assert_eq!(got, dists[0].0);
        }
    }

    #[test]
    fn empty_bank_rejected() {
        let (bank, norm) = tiny_bank();
        let empty = PoreBank::from_ground_truth(vec![], vec![]);
        let spec = spec_like(&bank.metrics[0], (0.0, 0.0, 0.0));
        assert!(matches!(match_pore(&spec, &empty, &norm), Err(AssembleError::EmptyBank)));
    }

    #[test]
    fn placement_in_empty_solid_increments_components() {
        let mut vol = VoxelVolume::solid((32, 32, 32), 4.0);
        let pore = ball_pore(2.0);
        assert_eq!(component_count(&vol), 0);
        let out = place_pore(&mut vol, &pore, (64.0, 64.0, 64.0));
        assert!(matches!(out, PlaceOutcome::Placed(_)));
        assert_eq!(component_count(&vol), 1);
    }

    #[test]
    fn overlapping_placement_rejected_and_restored() {
        let mut vol = VoxelVolume::solid((32, 32, 32), 4.0);
        let pore = ball_pore(2.5);
        assert!(matches!(place_pore(&mut vol, &pore, (64.0, 64.0, 64.0)), PlaceOutcome::Placed(_)));
        let snapshot = vol.clone();
        // same location: would merge
        assert_eq!(place_pore(&mut vol, &pore, (64.0, 64.0, 64.0)), PlaceOutcome::Rejected);
        assert_eq!(vol, snapshot, "volume must be restored bit-exactly");
        // adjacent (diagonal touch) also merges under 26-connectivity
        assert_eq!(place_pore(&mut vol, &pore, (84.0, 64.0, 64.0)), PlaceOutcome::Rejected);
        assert_eq!(vol, snapshot);
        assert_eq!(component_count(&vol), 1);
    }

    #[test]
    fn one_voxel_gap_placement_accepted() {
        let mut vol = VoxelVolume::solid((64, 32, 32), 4.0);
        let pore = rod_pore(3); // voxels along x
        assert!(matches!(place_pore(&mut vol, &pore, (40.0, 64.0, 64.0)), PlaceOutcome::Placed(_)));
        // rod occupies x in {8..=10}, y=16, z=16 (after centroid rounding).
        // next rod centered so its nearest voxel leaves one empty column
        let out = place_pore(&mut vol, &pore, (40.0 + 5.0 * 4.0, 64.0, 64.0));
        assert!(matches!(out, PlaceOutcome::Placed(_)));
        assert_eq!(component_count(&vol), 2, "gap of one voxel keeps components apart");
        // flood-fill oracle agrees
        let labeled = crate::voxel::label_components(&vol, Connectivity::Full26);
        assert_eq!(labeled.n_components(), 2);
    }

    fn demo_model_and_boundary(
        nz: usize,
        seed: u64,
    ) -> (SpatialModel, PoreBank, MatchNorm, VoxelVolume) {
        use rand::{Rng, SeedableRng};
        let vs = 4.0;
        let geometry = PartGeometry {
            center_um: (64.0, 64.0),
            diameter_um: 100.0,
            length_um: nz as f64 * vs,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let metrics: Vec<crate::metrics::PoreMetrics> = (0..150)
            .map(|_| {
                let r = 40.0 * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                crate::metrics::PoreMetrics {
                    volume_um3: rng.random_range(400.0..3000.0),
                    centroid_um: (
                        64.0 + r * a.cos(),
                        64.0 + r * a.sin(),
                        rng.random_range(0.0..geometry.length_um),
                    ),
                    eigvals: (1.0, 2.0, 3.0),
                    anisotropy: rng.random_range(0.1..0.8),
                    theta_z: rng.random_range(20.0..90.0),
                    phi_xy: 0.0,
                    nn_distance_um: None,
                }
            })
            .collect();
        let model = spatial::fit(&metrics, &geometry, 4).unwrap();
        let (bank, norm) = tiny_bank();
        // cylinder boundary mask
        let dims = (32usize, 32usize, nz);
        let mut boundary =
            VoxelVolume::new(dims, vs, vec![Phase::Exterior as u8; 32 * 32 * nz]).unwrap();
        for z in 0..nz {
            for y in 0..32 {
                for x in 0..32 {
                    let px = (x as f64 + 0.5) * vs - 64.0;
                    let py = (y as f64 + 0.5) * vs - 64.0;
                    if (px * px + py * py).sqrt() <= 50.0 {
                        boundary.set_phase(x, y, z, Phase::Solid);
                    }
                }
            }
        }
        (model, bank, norm, boundary)
    }

    #[test]
    fn windowed_equals_whole_part_assembly() {
        // same sampling order; the windowed pass uses local overlap checks,
        // the whole-part reference relabels the entire volume every time
        let (model, bank, norm, boundary) = demo_model_and_boundary(48, 5);
        let windowed = traverse(
            &model,
            &bank,
            &norm,
            &boundary,
            &AssembleConfig { window_dz_voxels: 24, retries: 50, seed: 9 },
        )
        .unwrap();
        let whole = traverse_reference(
            &model,
            &bank,
            &norm,
            &boundary,
            &AssembleConfig { window_dz_voxels: 24, retries: 50, seed: 9 },
        )
        .unwrap();
        assert_eq!(windowed.ledger.len(), whole.ledger.len());
        for (a, b) in windowed.ledger.iter().zip(whole.ledger.iter()) {
            assert_eq!(a.bank_id, b.bank_id);
            assert_eq!(a.location_um, b.location_um);
            assert_eq!(a.status, b.status);
        }
        assert_eq!(windowed.volume, whole.volume);
    }

    #[test]
    fn short_part_single_window() {
        let (model, bank, norm, boundary) = demo_model_and_boundary(12, 7);
        let part = traverse(
            &model,
            &bank,
            &norm,
            &boundary,
            &AssembleConfig { window_dz_voxels: 64, retries: 50, seed: 3 },
        )
        .unwrap();
        // every placed pore adds exactly one component
        assert_eq!(component_count(&part.volume), part.placed_count());
    }

    #[test]
    fn window_too_small_rejected() {
        let (model, bank, norm, boundary) = demo_model_and_boundary(12, 7);
        assert!(matches!(
            traverse(&model, &bank, &norm, &boundary, &AssembleConfig {
                window_dz_voxels: 2,
                retries: 10,
                seed: 0
            }),
            Err(AssembleError::WindowTooSmall { got: 2 })
        ));
    }

    #[test]
    fn component_count_tracks_placements() {
        let (model, bank, norm, boundary) = demo_model_and_boundary(32, 11);
        let part = traverse(
            &model,
            &bank,
            &norm,
            &boundary,
            &AssembleConfig { window_dz_voxels: 16, retries: 100, seed: 21 },
        )
        .unwrap();
        assert!(part.placed_count() > 0, "nothing placed");
        assert_eq!(component_count(&part.volume), part.placed_count());
        // skipped pores are logged, not silently dropped
        for e in &part.ledger {
            if e.status == PlacementStatus::Skipped {
                assert!(e.voxels.is_empty());
            }
        }
    }

    #[test]
    fn clipping_rules() {
        let (model, bank, norm, boundary) = demo_model_and_boundary(32, 13);
        let mut part = traverse(
            &model,
            &bank,
            &norm,
            &boundary,
            &AssembleConfig { window_dz_voxels: 32, retries: 100, seed: 31 },
        )
        .unwrap();
        let placed_before = part.placed_count();
        // shrink the boundary: clip against a narrower cylinder
        let dims = boundary.dims();
        let vs = boundary.voxel_size();
        let mut narrow = VoxelVolume::new(
            dims,
            vs,
            vec![Phase::Exterior as u8; dims.0 * dims.1 * dims.2],
        )
        .unwrap();
        for z in 0..dims.2 {
            for y in 0..dims.1 {
                for x in 0..dims.0 {
                    let px = (x as f64 + 0.5) * vs - 64.0;
                    let py = (y as f64 + 0.5) * vs - 64.0;
                    if (px * px + py * py).sqrt() <= 34.0 {
                        narrow.set_phase(x, y, z, Phase::Solid);
                    }
                }
            }
        }
        clip_to_boundary(&mut part, &narrow);
        // no pore voxel in the exterior phase
        for i in 0..part.volume.data().len() {
            if narrow.phase_raw(i) == Phase::Exterior as u8 {
                assert_ne!(part.volume.phase_raw(i), Phase::Pore as u8);
            }
        }
        // ledger matches the remaining components
        assert!(part.placed_count() <= placed_before);
        assert_eq!(component_count(&part.volume), part.placed_count());
        // all surviving pores still have >= 8 voxels
        for e in &part.ledger {
            if e.status == PlacementStatus::Placed {
                assert!(e.voxels.len() >= MIN_PORE_VOXELS);
            }
        }
    }

    #[test]
    fn fully_interior_pore_unchanged_by_clip() {
        let mut vol = VoxelVolume::solid((32, 32, 32), 4.0);
        let pore = ball_pore(2.0);
        let out = place_pore(&mut vol, &pore, (64.0, 64.0, 64.0));
        let PlaceOutcome::Placed(voxels) = out else { panic!("placement failed") };
        let mut part = PartRealization {
            volume: vol.clone(),
            ledger: vec![LedgerEntry {
                bank_id: 0,
                location_um: (64.0, 64.0, 64.0),
                status: PlacementStatus::Placed,
                retries: 0,
                voxels,
            }],
        };
        let boundary = VoxelVolume::solid((32, 32, 32), 4.0);
        clip_to_boundary(&mut part, &boundary);
        assert_eq!(part.volume, vol);
        assert_eq!(part.ledger.len(), 1);
    }

    #[test]
    fn ledger_csv_written() {
        let (model, bank, norm, boundary) = demo_model_and_boundary(16, 17);
        let part = traverse(
            &model,
            &bank,
            &norm,
            &boundary,
            &AssembleConfig { window_dz_voxels: 16, retries: 20, seed: 5 },
        )
        .unwrap();
        let dir = std::env::temp_dir().join("porosynth_ledger");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ledger.csv");
        write_ledger_csv(&part, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + part.ledger.len());
    }
}
