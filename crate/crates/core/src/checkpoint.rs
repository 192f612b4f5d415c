//! Single-file checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"SYCP"
//! u32     format version (1)
//! u64     manifest length in bytes
//! ...     manifest JSON (config snapshot, epoch, metric history)
//! u64     tensor count
//! per tensor:
//!   u32   name length, then UTF-8 name
//!   u32   rank, then u64 dims
//!   f64   payload, little-endian, row-major
//! ```
//!
//! Weights are keyed by hierarchical module path (`backbone.m1.conv.weight`);
//! optimizer state rides along under `optim.`. Exported inference
//! checkpoints carry neither `sr.*` nor `optim.*` entries.

use crate::error::{Error, Result};
use crate::head::LossBreakdown;
use crate::model::{Model, ModelConfig};
use crate::nn::ParamKind;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SYCP";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub class_names: Vec<String>,
    pub epoch: usize,
    /// True once the SR branch and optimizer state have been stripped.
    pub inference: bool,
    pub history: Vec<EpochRecord>,
}

pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    /// Snapshot a model plus optional optimizer state.
    pub fn from_model(
        model: &Model,
        class_names: Vec<String>,
        epoch: usize,
        history: Vec<EpochRecord>,
        optim_state: &[(String, Tensor)],
    ) -> Checkpoint {
        let mut tensors: Vec<(String, Tensor)> = model
            .store
            .iter()
            .map(|(_, name, e)| (name.to_string(), e.tensor.clone()))
            .collect();
        for (name, t) in optim_state {
            tensors.push((format!("optim.{name}"), t.clone()));
        }
        Checkpoint {
            manifest: CheckpointManifest {
                format_version: FORMAT_VERSION,
                model: model.cfg.clone(),
                class_names,
                epoch,
                inference: false,
                history,
            },
            tensors,
        }
    }

    /// Rebuild the model this checkpoint describes.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::new(self.manifest.model.clone())?;
        let mut loaded = 0usize;
        for (name, tensor) in &self.tensors {
            if name.starts_with("optim.") {
                continue;
            }
            let id = model.store.id_of(name).ok_or_else(|| {
                Error::Checkpoint(format!("checkpoint weight {name} not in model"))
            })?;
            if model.store.tensor(id).shape() != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: model {:?}, checkpoint {:?}",
                    model.store.tensor(id).shape(),
                    tensor.shape()
                )));
            }
            *model.store.tensor_mut(id) = tensor.clone();
            loaded += 1;
        }
        let expected = model.store.len();
        if loaded != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {loaded} of {expected} model tensors"
            )));
        }
        Ok(model)
    }

    /// Momentum buffers for resuming, keyed by parameter name.
    pub fn optim_state(&self) -> Vec<(String, Tensor)> {
        self.tensors
            .iter()
            .filter_map(|(n, t)| {
                n.strip_prefix("optim.")
                    .map(|rest| (rest.to_string(), t.clone()))
            })
            .collect()
    }

    /// Strip the SR namespace and optimizer state; rebuilds the graph
    /// without SR taps.
    pub fn export_inference(&self) -> Result<Checkpoint> {
        let model = self.to_model()?;
        let exported = model.export_inference()?;
        let tensors: Vec<(String, Tensor)> = exported
            .store
            .iter()
            .map(|(_, name, e)| (name.to_string(), e.tensor.clone()))
            .collect();
        Ok(Checkpoint {
            manifest: CheckpointManifest {
                format_version: FORMAT_VERSION,
                model: exported.cfg.clone(),
                class_names: self.manifest.class_names.clone(),
                epoch: self.manifest.epoch,
                inference: true,
                history: self.manifest.history.clone(),
            },
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest =
            serde_json::to_vec(&self.manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let io = |e: std::io::Error| Error::io(path, e);
        f.write_all(MAGIC).map_err(io)?;
        f.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        f.write_all(&(manifest.len() as u64).to_le_bytes()).map_err(io)?;
        f.write_all(&manifest).map_err(io)?;
        f.write_all(&(self.tensors.len() as u64).to_le_bytes()).map_err(io)?;
        for (name, t) in &self.tensors {
            f.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
            f.write_all(name.as_bytes()).map_err(io)?;
            f.write_all(&(t.shape().len() as u32).to_le_bytes()).map_err(io)?;
            for &d in t.shape() {
                f.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
            }
            let mut buf = Vec::with_capacity(t.numel() * 8);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            f.write_all(&buf).map_err(io)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let io = |e: std::io::Error| Error::io(path, e);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not a checkpoint (bad magic)",
                path.display()
            )));
        }
        let mut u32b = [0u8; 4];
        let mut u64b = [0u8; 8];
        f.read_exact(&mut u32b).map_err(io)?;
        let version = u32::from_le_bytes(u32b);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        f.read_exact(&mut u64b).map_err(io)?;
        let mlen = u64::from_le_bytes(u64b) as usize;
        let mut manifest_buf = vec![0u8; mlen];
        f.read_exact(&mut manifest_buf).map_err(io)?;
        let manifest: CheckpointManifest = serde_json::from_slice(&manifest_buf)
            .map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        f.read_exact(&mut u64b).map_err(io)?;
        let count = u64::from_le_bytes(u64b) as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            f.read_exact(&mut u32b).map_err(io)?;
            let nlen = u32::from_le_bytes(u32b) as usize;
            let mut nbuf = vec![0u8; nlen];
            f.read_exact(&mut nbuf).map_err(io)?;
            let name = String::from_utf8(nbuf)
                .map_err(|e| Error::Checkpoint(format!("tensor name: {e}")))?;
            f.read_exact(&mut u32b).map_err(io)?;
            let rank = u32::from_le_bytes(u32b) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                f.read_exact(&mut u64b).map_err(io)?;
                shape.push(u64::from_le_bytes(u64b) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut buf = vec![0u8; numel * 8];
            f.read_exact(&mut buf).map_err(io)?;
            let data: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::new(shape, data)));
        }
        Ok(Checkpoint { manifest, tensors })
    }

    pub fn total_weight_params(&self) -> usize {
        self.tensors
            .iter()
            .filter(|(n, _)| !n.starts_with("optim."))
            .map(|(_, t)| t.numel())
            .sum()
    }
}

/// Count of trainable parameters a checkpoint would restore (buffers and
/// optimizer state excluded), by rebuilding and asking the store.
pub fn trainable_params(model: &Model) -> usize {
    model
        .store
        .iter()
        .filter(|(_, _, e)| e.kind != ParamKind::Buffer)
        .map(|(_, _, e)| e.tensor.numel())
        .sum()
}
