//! Pipeline configuration: one JSON file, overridable per-field by flags.

use serde::{Deserialize, Serialize};

use porosynth::gan::Profile;
use porosynth::synth::SynthConfig;
use porosynth::synthetic::SyntheticConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GanSection {
    pub profile: String, // "desk" | "full"
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub latent: usize,
    pub bank_size: usize,
}

impl Default for GanSection {
    fn default() -> Self {
        GanSection { profile: "desk".into(), batch: 32, epochs: 40, lr: 1e-3, latent: 100, bank_size: 512 }
    }
}

impl GanSection {
    pub fn profile(&self) -> Result<Profile, String> {
        match self.profile.as_str() {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(format!("unknown profile '{other}' (expected desk or full)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub size: usize,
    pub ensemble: usize,
    pub iterations: usize,
    pub lr: f64,
    pub lr_final: f64,
    pub stop_ratio: Option<f64>,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        SynthSection {
            size: d.size,
            ensemble: d.ensemble,
            iterations: d.iterations,
            lr: d.lr,
            lr_final: d.lr_final,
            stop_ratio: d.stop_ratio,
        }
    }
}

impl SynthSection {
    pub fn to_config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            size: self.size,
            ensemble: self.ensemble,
            iterations: self.iterations,
            lr: self.lr,
            lr_final: self.lr_final,
            stop_ratio: self.stop_ratio,
            seed,
            ..SynthConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub voxel_size: f64,
    pub n_bins: usize,
    pub window_dz: usize,
    pub n_theta: usize,
    pub synthetic: SyntheticConfig,
    pub synth: SynthSection,
    pub gan: GanSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            voxel_size: 4.0,
            n_bins: 30,
            window_dz: 256,
            n_theta: 256,
            synthetic: SyntheticConfig::default(),
            synth: SynthSection::default(),
            gan: GanSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &std::path::Path) -> Result<PipelineConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }

    /// Stable FNV-1a hash of the serialized config, logged per run.
    pub fn hash(&self) -> u64 {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}
