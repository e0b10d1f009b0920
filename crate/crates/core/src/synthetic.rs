//! Parametric ground-truth part generator: a rough cylinder boundary
//! (band-limited radial noise) carved with randomly oriented ellipsoid
//! pores placed by a configurable radial density law. The manifest records
//! the true generating parameters so tests can assert against them.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::voxel::{Phase, VoxelVolume, MIN_PORE_VOXELS};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub dims: (usize, usize, usize),
    pub voxel_size: f64,
    /// Nominal cylinder radius, micrometers.
    pub radius_um: f64,
    /// Std of the band-limited boundary roughness, micrometers.
    pub boundary_amplitude_um: f64,
    /// Random Fourier modes composing the boundary.
    pub boundary_modes: usize,
    /// Pores to place (actual count may fall short if space runs out).
    pub target_pores: usize,
    /// Radial density law: weight(r) = 1 + radial_bias * (r / R)^radial_power.
    pub radial_bias: f64,
    pub radial_power: f64,
    /// Lognormal pore volume parameters (of ln volume in um^3).
    pub volume_log_mean: f64,
    pub volume_log_std: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            dims: (96, 96, 256),
            voxel_size: 4.0,
            radius_um: 168.0,
            boundary_amplitude_um: 6.0,
            boundary_modes: 24,
            target_pores: 1200,
            radial_bias: 3.0,
            radial_power: 2.0,
            volume_log_mean: 6.9, // ~1000 um^3 median
            volume_log_std: 0.55,
            seed: 0,
        }
    }
}

/// True parameters of one placed pore.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruePore {
    pub center_um: (f64, f64, f64),
    pub volume_um3: f64,
    pub anisotropy: f64,
    pub theta_deg: f64,
    pub phi_deg: f64,
    pub voxels: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub config: SyntheticConfig,
    pub placed: Vec<TruePore>,
    pub rejected_attempts: usize,
    pub axis_center_um: (f64, f64),
}

pub struct SyntheticPart {
    pub volume: VoxelVolume,
    pub manifest: SyntheticManifest,
}

struct BoundaryMode {
    k_theta: usize,
    k_z: f64,
    amp: f64,
    phase_theta: f64,
    phase_z: f64,
}

fn boundary_modes(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<BoundaryMode> {
    let length = cfg.dims.2 as f64 * cfg.voxel_size;
    let per_mode = cfg.boundary_amplitude_um / (cfg.boundary_modes as f64 / 2.0).sqrt();
    (0..cfg.boundary_modes)
        .map(|_| BoundaryMode {
            k_theta: rng.random_range(1..=6),
            // axial wavelengths no shorter than ~8 voxel layers
            k_z: 2.0 * std::f64::consts::PI / rng.random_range((8.0 * cfg.voxel_size)..(length / 2.0)),
            amp: per_mode * rng.random_range(0.5..1.5),
            phase_theta: rng.random_range(0.0..std::f64::consts::TAU),
            phase_z: rng.random_range(0.0..std::f64::consts::TAU),
        })
        .collect()
}

fn boundary_radius(modes: &[BoundaryMode], nominal: f64, theta: f64, z_um: f64) -> f64 {
    let mut r = nominal;
    for m in modes {
        r += m.amp
            * (m.k_theta as f64 * theta + m.phase_theta).cos()
            * (m.k_z * z_um + m.phase_z).cos();
    }
    r
}

/// Prolate ellipsoid semi-axes (a >= b = c) for a target volume and
/// anisotropy A = 1 - lambda_min/lambda_max of the solid ellipsoid.
pub fn ellipsoid_semi_axes(volume_um3: f64, anisotropy: f64) -> (f64, f64) {
    let a3 = 3.0 * volume_um3 / (4.0 * std::f64::consts::PI) * (1.0 + anisotropy)
        / (1.0 - anisotropy).max(1e-6);
    let a = a3.cbrt();
    let b = a * ((1.0 - anisotropy).max(1e-6) / (1.0 + anisotropy)).sqrt();
    (a, b)
}

/// Generate one part. Deterministic per config (including seed).
pub fn generate_part(cfg: &SyntheticConfig) -> SyntheticPart {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (nx, ny, nz) = cfg.dims;
    let vs = cfg.voxel_size;
    let center = ((nx as f64 * vs) / 2.0, (ny as f64 * vs) / 2.0);
    let modes = boundary_modes(cfg, &mut rng);

    let mut volume =
        VoxelVolume::new(cfg.dims, vs, vec![Phase::Exterior as u8; nx * ny * nz]).expect("dims");
    for z in 0..nz {
        let z_um = (z as f64 + 0.5) * vs;
        for y in 0..ny {
            let py = (y as f64 + 0.5) * vs - center.1;
            for x in 0..nx {
                let px = (x as f64 + 0.5) * vs - center.0;
                let r = (px * px + py * py).sqrt();
                let theta = py.atan2(px);
                if r <= boundary_radius(&modes, cfg.radius_um, theta, z_um) {
                    volume.set_phase(x, y, z, Phase::Solid);
                }
            }
        }
    }

    // radial location sampling: pdf(r) proportional to r * weight(r)
    let sample_radius = |rng: &mut ChaCha8Rng| -> f64 {
        let r_max = cfg.radius_um - 3.0 * vs;
        let w_max = 1.0 + cfg.radial_bias.max(0.0);
        loop {
            let r = r_max * rng.random::<f64>().sqrt(); // area-uniform
            let w = 1.0 + cfg.radial_bias * (r / cfg.radius_um).powf(cfg.radial_power);
            if rng.random::<f64>() * w_max <= w {
                return r;
            }
        }
    };

    let length_um = nz as f64 * vs;
    let mut placed = Vec::new();
    let mut rejected = 0usize;
    let max_attempts = cfg.target_pores * 30 + 100;
    let mut attempts = 0usize;
    while placed.len() < cfg.target_pores && attempts < max_attempts {
        attempts += 1;
        let r = sample_radius(&mut rng);
        let ang = rng.random_range(0.0..std::f64::consts::TAU);
        let cx = center.0 + r * ang.cos();
        let cy = center.1 + r * ang.sin();
        let cz = rng.random_range((4.0 * vs)..(length_um - 4.0 * vs));

        let volume_um3: f64 = {
            let g: f64 = rng.sample(rand_distr::StandardNormal);
            (cfg.volume_log_mean + cfg.volume_log_std * g).exp()
        };
        let anisotropy = {
            // peaked near 0.5 like lack-of-fusion populations
            let u: f64 = rng.random_range(0.0..1.0);
            let v: f64 = rng.random_range(0.0..1.0);
            (0.5 * (u + v)).clamp(0.02, 0.93)
        };
        // orientation: mostly perpendicular to the build axis
        let theta_deg: f64 = if rng.random_bool(0.7) {
            let g: f64 = rng.sample(rand_distr::StandardNormal);
            (90.0 - g.abs() * 18.0).clamp(0.0, 90.0)
        } else {
            let u: f64 = rng.random_range(0.0..1.0);
            u.acos().to_degrees()
        };
        let phi_deg: f64 = rng.random_range(0.0..180.0);

        let (a_um, b_um) = ellipsoid_semi_axes(volume_um3, anisotropy);
        let theta = theta_deg.to_radians();
        let phi = phi_deg.to_radians();
        let axis = [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];

        // rasterize candidate voxels
        let reach = (a_um / vs).ceil() as i64 + 1;
        let (vx, vy, vz) = ((cx / vs) as i64, (cy / vs) as i64, (cz / vs) as i64);
        let mut voxels = Vec::new();
        let mut blocked = false;
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (tx, ty, tz) = (vx + dx, vy + dy, vz + dz);
                    if tx < 0 || ty < 0 || tz < 0 || tx >= nx as i64 || ty >= ny as i64 || tz >= nz as i64 {
                        continue;
                    }
                    let p = [
                        (tx as f64 + 0.5) * vs - cx,
                        (ty as f64 + 0.5) * vs - cy,
                        (tz as f64 + 0.5) * vs - cz,
                    ];
                    let along = p[0] * axis[0] + p[1] * axis[1] + p[2] * axis[2];
                    let perp2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2] - along * along;
                    if (along / a_um).powi(2) + perp2 / (b_um * b_um) <= 1.0 {
                        if volume.phase(tx as usize, ty as usize, tz as usize) != Phase::Solid {
                            blocked = true;
                        }
                        voxels.push((tx as usize, ty as usize, tz as usize));
                    }
                }
            }
            if blocked {
                break;
            }
        }
        if blocked || voxels.len() < MIN_PORE_VOXELS {
            rejected += 1;
            continue;
        }
        // keep one voxel of clearance so neighboring pores stay distinct
        let mut touches = false;
        'scan: for &(x, y, z) in &voxels {
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (ax, ay, az) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if ax < 0 || ay < 0 || az < 0 || ax >= nx as i64 || ay >= ny as i64 || az >= nz as i64 {
                            continue;
                        }
                        if volume.phase(ax as usize, ay as usize, az as usize) == Phase::Pore {
                            touches = true;
                            break 'scan;
                        }
                    }
                }
            }
        }
        if touches {
            rejected += 1;
            continue;
        }
        for &(x, y, z) in &voxels {
            volume.set_phase(x, y, z, Phase::Pore);
        }
        placed.push(TruePore {
            center_um: (cx, cy, cz),
            volume_um3,
            anisotropy,
            theta_deg,
            phi_deg,
            voxels: voxels.len(),
        });
    }

    SyntheticPart {
        volume,
        manifest: SyntheticManifest {
            config: cfg.clone(),
            placed,
            rejected_attempts: rejected,
            axis_center_um: center,
        },
    }
}

pub fn save_manifest(manifest: &SyntheticManifest, path: &Path) -> std::io::Result<()> {
    std::fs::write(
        path,
        serde_json::to_string_pretty(manifest).map_err(std::io::Error::other)?,
    )
}

pub fn load_manifest(path: &Path) -> std::io::Result<SyntheticManifest> {
    serde_json::from_str(&std::fs::read_to_string(path)?).map_err(std::io::Error::other)
}
