use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelParams};
use crate::engine::{Real, Tensor};

pub const MANIFEST: &str = "manifest.json";
pub const PARAMS: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into `params.bin`.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub dtype: String,
    pub model: ModelConfig,
    pub num_features: usize,
    pub num_classes: Option<usize>,
    /// Free-form echo of the run that produced the checkpoint.
    #[serde(default)]
    pub run: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub manifest: Manifest,
    pub params: ModelParams<T>,
}

fn io(path: &Path, e: impl std::fmt::Display) -> ModelError {
    ModelError::Checkpoint(format!("{}: {e}", path.display()))
}

/// Writes `manifest.json` and `params.bin` (little-endian `f64`, tensors
/// back to back in manifest order).
pub fn save_checkpoint<T: Real>(
    dir: &Path,
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    run: serde_json::Value,
) -> Result<Manifest, ModelError> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut bytes = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in params.named_tensors() {
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset: bytes.len(),
        });
        for &v in t.data() {
            bytes.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: "hamgnn-checkpoint-1".into(),
        dtype: "f64-le".into(),
        model: cfg.clone(),
        num_features: params.num_features(),
        num_classes: params.num_classes(),
        run,
        tensors,
    };
    let path = dir.join(PARAMS);
    fs::write(&path, &bytes).map_err(|e| io(&path, e))?;
    let path = dir.join(MANIFEST);
    let body = serde_json::to_string_pretty(&manifest).map_err(|e| io(&path, e))?;
    fs::write(&path, body + "\n").map_err(|e| io(&path, e))?;
    Ok(manifest)
}

pub fn load_checkpoint<T: Real>(dir: &Path) -> Result<Checkpoint<T>, ModelError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| io(&path, e))?;
    if manifest.dtype != "f64-le" {
        return Err(io(&path, format!("unsupported dtype {}", manifest.dtype)));
    }
    let path = dir.join(PARAMS);
    let bytes = fs::read(&path).map_err(|e| io(&path, e))?;

    // The architecture is fixed by the config; the random values are overwritten.
    let mut params = ModelParams::<T>::init(
        &manifest.model,
        manifest.num_features,
        manifest.num_classes.unwrap_or(0),
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    let expected: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let entries: HashMap<&str, &TensorEntry> = manifest.tensors.iter().map(|e| (e.name.as_str(), e)).collect();
    if entries.len() != expected.len() {
        return Err(ModelError::Checkpoint(format!(
            "manifest lists {} tensors, the model has {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    for ((name, shape), slot) in expected.iter().zip(params.tensors_mut()) {
        let entry = entries
            .get(name.as_str())
            .ok_or_else(|| ModelError::Checkpoint(format!("tensor {name} missing from manifest")))?;
        if &entry.shape != shape {
            return Err(ModelError::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                entry.shape
            )));
        }
        let len: usize = shape.iter().product();
        let end = entry.offset + 8 * len;
        let raw = bytes
            .get(entry.offset..end)
            .ok_or_else(|| ModelError::Checkpoint(format!("tensor {name} runs past the end of {PARAMS}")))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        *slot = Tensor::new(shape, data)?;
    }
    Ok(Checkpoint { manifest, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Decoder, ModelKind};

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (variant, decoder) in [
            (ModelKind::Symplectic, Decoder::Classification),
            (ModelKind::HigherDim, Decoder::Link),
            (ModelKind::Mlp, Decoder::Classification),
        ] {
            let cfg = ModelConfig {
                hidden: 3,
                layers: 2,
                variant,
                decoder,
                momentum_dim: Some(2),
                ..ModelConfig::default()
            };
            let params = ModelParams::<f64>::init(&cfg, 4, 3, &mut rng).unwrap();
            let m = save_checkpoint(dir.path(), &cfg, &params, serde_json::json!({"seed": 1})).unwrap();
            let bytes = fs::read(dir.path().join(PARAMS)).unwrap();
            assert_eq!(bytes.len(), 8 * params.num_parameters());
            assert_eq!(m.tensors[1].offset, 8 * params.named_tensors()[0].1.len());
            let back = load_checkpoint::<f64>(dir.path()).unwrap();
            assert_eq!(back.params, params);
            assert_eq!(back.manifest.model, cfg);
        }
    }

    #[test]
    fn truncated_params_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig {
            hidden: 2,
            layers: 1,
            ..ModelConfig::default()
        };
        let params = ModelParams::<f64>::init(&cfg, 2, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        save_checkpoint(dir.path(), &cfg, &params, serde_json::Value::Null).unwrap();
        let path = dir.path().join(PARAMS);
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&path, bytes).unwrap();
        let err = load_checkpoint::<f64>(dir.path()).unwrap_err();
        assert!(err.to_string().contains("past the end"), "{err}");
    }
}
