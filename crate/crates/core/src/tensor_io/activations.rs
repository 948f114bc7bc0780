use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::axt::{read_axt, write_axt, AxtTensor};
use crate::error::{Error, Result};

/// Token-type layout of one image's token sequence.
///
/// Indices `0..n_cls` are class tokens, the next `n_reg` are registers and the
/// remaining `n_patch` are patches in row-major grid order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub n_cls: usize,
    pub n_reg: usize,
    pub n_patch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Cls,
    Register,
    Patch { row: usize, col: usize },
}

impl TokenLayout {
    pub fn new(n_cls: usize, n_reg: usize, n_patch: usize) -> Result<Self> {
        let layout = Self { n_cls, n_reg, n_patch };
        layout.validate()?;
        Ok(layout)
    }

    /// 1 class token, 4 registers and a 16 × 16 patch grid.
    pub fn vit_with_registers() -> Self {
        Self {
            n_cls: 1,
            n_reg: 4,
            n_patch: 256,
        }
    }

    pub fn patches_only(n_patch: usize) -> Result<Self> {
        Self::new(0, 0, n_patch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patch == 0 || self.grid_side_checked().is_none() {
            return Err(Error::arg(format!("n_patch = {} is not a positive perfect square", self.n_patch)));
        }
        Ok(())
    }

    fn grid_side_checked(&self) -> Option<usize> {
        let g = (self.n_patch as f64).sqrt().round() as usize;
        (g * g == self.n_patch).then_some(g)
    }

    pub fn n_tokens(&self) -> usize {
        self.n_cls + self.n_reg + self.n_patch
    }

    pub fn grid_side(&self) -> usize {
        self.grid_side_checked().expect("layout validated on construction")
    }

    pub fn first_patch(&self) -> usize {
        self.n_cls + self.n_reg
    }

    pub fn kind(&self, token: usize) -> TokenKind {
        if token < self.n_cls {
            TokenKind::Cls
        } else if token < self.first_patch() {
            TokenKind::Register
        } else {
            let p = token - self.first_patch();
            let g = self.grid_side();
            TokenKind::Patch { row: p / g, col: p % g }
        }
    }

    pub fn cls_range(&self) -> std::ops::Range<usize> {
        0..self.n_cls
    }

    pub fn reg_range(&self) -> std::ops::Range<usize> {
        self.n_cls..self.first_patch()
    }

    pub fn patch_range(&self) -> std::ops::Range<usize> {
        self.first_patch()..self.n_tokens()
    }
}

/// JSON sidecar stored next to an activation tensor as `<name>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMeta {
    pub layout: TokenLayout,
    #[serde(default)]
    pub layer_index: Option<i64>,
}

/// Token embeddings of `n` images, each with `t` tokens of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    n: usize,
    t: usize,
    d: usize,
    data: Vec<f64>,
    layout: TokenLayout,
    layer_index: Option<i64>,
}

impl ActivationSet {
    /// `data` is row-major `(n, t, d)`.
    pub fn new(n: usize, d: usize, data: Vec<f64>, layout: TokenLayout, layer_index: Option<i64>) -> Result<Self> {
        layout.validate()?;
        let t = layout.n_tokens();
        if n == 0 || d == 0 {
            return Err(Error::arg("activation set needs n ≥ 1 and d ≥ 1"));
        }
        if data.len() != n * t * d {
            return Err(Error::shape(format!(
                "expected {n}×{t}×{d} = {} values, got {}",
                n * t * d,
                data.len()
            )));
        }
        Ok(Self {
            n,
            t,
            d,
            data,
            layout,
            layer_index,
        })
    }

    pub fn from_tensor(tensor: &AxtTensor, layout: TokenLayout, layer_index: Option<i64>) -> Result<Self> {
        let dims = tensor.dims();
        if dims.len() != 3 {
            return Err(Error::shape(format!("activation tensor must be 3-d, got dims {dims:?}")));
        }
        let (n, t, d) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
        if t != layout.n_tokens() {
            return Err(Error::shape(format!(
                "tensor has {t} tokens but layout declares {}",
                layout.n_tokens()
            )));
        }
        Self::new(n, d, tensor.to_f64_vec(), layout, layer_index)
    }

    pub fn to_tensor(&self) -> AxtTensor {
        AxtTensor::from_f64(vec![self.n as u64, self.t as u64, self.d as u64], self.data.clone())
            .expect("shape invariant")
    }

    pub fn meta(&self) -> ActivationMeta {
        ActivationMeta {
            layout: self.layout,
            layer_index: self.layer_index,
        }
    }

    /// Sidecar path for an activation file: `dir/acts.axt` → `dir/acts.meta.json`.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        path.with_file_name(format!("{stem}.meta.json"))
    }

    /// Load a tensor and its sidecar. Without a sidecar the tokens are taken
    /// to be patches only, which requires `t` to be a perfect square.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let tensor = read_axt(path)?;
        let sidecar = Self::sidecar_path(path);
        let meta = if sidecar.exists() {
            let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
            serde_json::from_str::<ActivationMeta>(&text)?
        } else {
            let t = *tensor
                .dims()
                .get(1)
                .ok_or_else(|| Error::shape("activation tensor must be 3-d"))? as usize;
            ActivationMeta {
                layout: TokenLayout::patches_only(t)?,
                layer_index: None,
            }
        };
        Self::from_tensor(&tensor, meta.layout, meta.layer_index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_axt(&self.to_tensor(), path)?;
        let sidecar = Self::sidecar_path(path);
        let text = serde_json::to_string_pretty(&self.meta())?;
        fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))
    }

    pub fn n_images(&self) -> usize {
        self.n
    }

    pub fn n_tokens(&self) -> usize {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn layout(&self) -> &TokenLayout {
        &self.layout
    }

    pub fn layer_index(&self) -> Option<i64> {
        self.layer_index
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn token(&self, image: usize, token: usize) -> &[f64] {
        let start = (image * self.t + token) * self.d;
        &self.data[start..start + self.d]
    }

    pub fn token_mut(&mut self, image: usize, token: usize) -> &mut [f64] {
        let start = (image * self.t + token) * self.d;
        &mut self.data[start..start + self.d]
    }

    /// Patch tokens of one image as a `n_patch × d` matrix.
    pub fn image_patches(&self, image: usize) -> DMatrix<f64> {
        let first = self.layout.first_patch();
        DMatrix::from_fn(self.layout.n_patch, self.d, |p, k| self.token(image, first + p)[k])
    }

    /// Same layout and metadata, new values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.n, self.d, data, self.layout, self.layer_index)
    }
}

/// Concatenate all tokens: row `i·t + j` is token `j` of image `i`.
pub fn flatten_tokens(a: &ActivationSet) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.n * a.t, a.d, &a.data)
}
