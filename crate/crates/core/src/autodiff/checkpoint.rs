//! Checkpoint files: a JSON manifest (tensor names, shapes, op list,
//! hyperparameters) next to a raw little-endian f32 parameter blob.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AutodiffError, Real, Tensor};

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    ops: Vec<String>,
    hyperparams: serde_json::Value,
    tensors: Vec<ManifestEntry>,
    blob_file: String,
}

/// Named tensors plus the metadata needed to rebuild the owning network.
pub struct Checkpoint {
    pub ops: Vec<String>,
    pub hyperparams: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Tensor, AutodiffError> {
        self.tensors
            .get(name)
            .ok_or_else(|| AutodiffError::MissingTensor(name.to_string()))
    }
}

/// Write `<base>.json` + `<base>.bin`.
pub fn save_checkpoint(
    base: &Path,
    ops: &[String],
    hyperparams: serde_json::Value,
    tensors: &[(&str, &Tensor)],
) -> Result<(), AutodiffError> {
    let mut entries = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (name, t) in tensors {
        entries.push(ManifestEntry {
            name: name.to_string(),
            shape: t.shape.clone(),
            offset,
            len: t.numel(),
        });
        for &v in &t.data {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        offset += t.numel();
    }
    let blob_name = format!(
        "{}.bin",
        base.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "ckpt".into())
    );
    let manifest = Manifest {
        ops: ops.to_vec(),
        hyperparams,
        tensors: entries,
        blob_file: blob_name,
    };
    std::fs::write(base.with_extension("json"), serde_json::to_string_pretty(&manifest)?)?;
    let mut f = std::fs::File::create(base.with_extension("bin"))?;
    f.write_all(&blob)?;
    Ok(())
}

pub fn load_checkpoint(base: &Path) -> Result<Checkpoint, AutodiffError> {
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(base.with_extension("json"))?)?;
    let mut blob = Vec::new();
    std::fs::File::open(base.with_extension("bin"))?.read_to_end(&mut blob)?;
    let total: usize = manifest.tensors.iter().map(|e| e.len).sum();
    if blob.len() != total * 4 {
        return Err(AutodiffError::BlobLength { got: blob.len(), expected: total * 4 });
    }
    let mut tensors = BTreeMap::new();
    for e in &manifest.tensors {
        let start = e.offset * 4;
        let data: Vec<Real> = blob[start..start + e.len * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as Real)
            .collect();
        tensors.insert(e.name.clone(), Tensor::from_vec(&e.shape, data));
    }
    Ok(Checkpoint { ops: manifest.ops, hyperparams: manifest.hyperparams, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = std::env::temp_dir().join("porosynth_ckpt");
        std::fs::create_dir_all(&dir).unwrap();
        let base = dir.join("net");
        let a = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::from_vec(&[4], vec![0.5, -0.25, 0.0, 9.0]);
        save_checkpoint(
            &base,
            &["conv".into(), "relu".into()],
            serde_json::json!({"lr": 2e-5}),
            &[("w", &a), ("bias", &b)],
        )
        .unwrap();
        let ck = load_checkpoint(&base).unwrap();
        assert_eq!(ck.ops, vec!["conv".to_string(), "relu".to_string()]);
        assert_eq!(ck.tensor("w").unwrap(), &a);
        assert_eq!(ck.tensor("bias").unwrap(), &b);
        assert!(ck.tensor("missing").is_err());
    }
}
