use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::activations::{ActivationSet, TokenLayout};
use super::axt::{read_axt, Dtype};
use crate::error::{Error, Result};

/// Per-layer activation dump description written by the extractor as
/// `manifest.json`. File paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionManifest {
    pub backbone: String,
    pub layers: Vec<i64>,
    pub image_list_hash: String,
    pub layout: TokenLayout,
    pub dtype: String,
    pub files: Vec<ManifestEntry>,
    #[serde(default)]
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub layer: i64,
    pub path: String,
}

impl ExtractionManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    /// Read `dir/manifest.json` and check that every listed tensor exists,
    /// parses, and matches the declared layout and dtype.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(Self::FILE_NAME);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Self = serde_json::from_str(&text)?;
        manifest.validate(dir)?;
        Ok(manifest)
    }

    fn validate(&self, dir: &Path) -> Result<()> {
        self.layout.validate()?;
        let dtype = match self.dtype.as_str() {
            "f32" => Dtype::F32,
            "f64" => Dtype::F64,
            other => return Err(Error::arg(format!("manifest dtype {other:?} is not f32 or f64"))),
        };
        for entry in &self.files {
            if !self.layers.contains(&entry.layer) {
                return Err(Error::arg(format!("file {} lists undeclared layer {}", entry.path, entry.layer)));
            }
            let tensor = read_axt(dir.join(&entry.path))?;
            if tensor.dtype() != dtype {
                return Err(Error::arg(format!("{} is {:?}, manifest says {}", entry.path, tensor.dtype(), self.dtype)));
            }
            let dims = tensor.dims();
            if dims.len() != 3 || dims[1] as usize != self.layout.n_tokens() {
                return Err(Error::shape(format!(
                    "{} has dims {dims:?}, layout needs (n, {}, d)",
                    entry.path,
                    self.layout.n_tokens()
                )));
            }
        }
        Ok(())
    }

    pub fn path_for_layer(&self, dir: &Path, layer: i64) -> Option<PathBuf> {
        self.files.iter().find(|e| e.layer == layer).map(|e| dir.join(&e.path))
    }

    /// Load the activations of one exported layer.
    pub fn activations(&self, dir: &Path, layer: i64) -> Result<ActivationSet> {
        let path = self
            .path_for_layer(dir, layer)
            .ok_or_else(|| Error::arg(format!("layer {layer} not in manifest")))?;
        ActivationSet::from_tensor(&read_axt(&path)?, self.layout, Some(layer))
    }
}
