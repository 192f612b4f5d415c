//! Dataset manifest and loading.

use super::labels::{read_label_file, BoundingBoxLabel};
use super::ImagePair;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub rgb: String,
    pub ir: String,
    pub label: String,
    pub split: String,
}

/// Structured text index of a dataset: (rgb, ir, label) triples plus split
/// tags and the IR normalization choice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub n_classes: usize,
    pub class_names: Vec<String>,
    /// Bit depth the IR band was normalized by (8 or 16).
    pub ir_bit_depth: u8,
    #[serde(default)]
    pub items: Vec<ManifestItem>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::config("manifest", e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::config("manifest", e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// A manifest bound to its directory, able to load samples.
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

pub struct Sample {
    pub pair: ImagePair,
    pub labels: Vec<BoundingBoxLabel>,
}

impl Dataset {
    /// Open `dir/manifest.toml`.
    pub fn open(dir: &Path) -> Result<Dataset> {
        let manifest = Manifest::load(&dir.join("manifest.toml"))?;
        Ok(Dataset {
            root: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.items.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.manifest.n_classes
    }

    pub fn load(&self, index: usize) -> Result<Sample> {
        let item = &self.manifest.items[index];
        let rgb = super::read_rgb(&self.root.join(&item.rgb))?;
        let (ir, _depth) = super::read_ir(&self.root.join(&item.ir))?;
        let pair = ImagePair::new(rgb, ir, item.id.clone())?;
        let labels = read_label_file(&self.root.join(&item.label))?;
        for l in &labels {
            if l.class_id >= self.manifest.n_classes {
                return Err(Error::Range(format!(
                    "label class {} out of range for {} classes ({})",
                    l.class_id, self.manifest.n_classes, item.id
                )));
            }
        }
        Ok(Sample { pair, labels })
    }

    /// Load every sample eagerly; desk-scale datasets fit in memory.
    pub fn load_all(&self) -> Result<Vec<Sample>> {
        (0..self.len()).map(|i| self.load(i)).collect()
    }

    /// All label boxes, for anchor estimation.
    pub fn all_labels(&self) -> Result<Vec<Vec<BoundingBoxLabel>>> {
        self.manifest
            .items
            .iter()
            .map(|item| read_label_file(&self.root.join(&item.label)))
            .collect()
    }
}
