//! AXT binary tensor files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "AXT1" | u32 dtype (0 = f32, 1 = f64) | u32 ndim | ndim × u64 dims
//!        | payload (Π dims scalars, row-major) | u8 name length | name bytes (UTF-8)
//! ```

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const AXT_MAGIC: &[u8; 4] = b"AXT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u32 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An n-dimensional dense tensor as stored in an AXT file.
///
/// Equality is bitwise on the payload, so NaN payloads compare equal to
/// themselves and `-0.0 != 0.0`.
#[derive(Debug, Clone)]
pub struct AxtTensor {
    dims: Vec<u64>,
    data: TensorData,
    name: Option<String>,
}

impl PartialEq for AxtTensor {
    fn eq(&self, other: &Self) -> bool {
        let payload_eq = match (&self.data, &other.data) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::F64(a), TensorData::F64(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        };
        payload_eq && self.dims == other.dims && self.name == other.name
    }
}

fn check_dims(dims: &[u64], len: usize) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::arg("tensor needs at least one dimension"));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::arg(format!("dims must be strictly positive, got {dims:?}")));
    }
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::arg("dims product overflows"))?;
    if count != len as u64 {
        return Err(Error::shape(format!(
            "payload holds {len} scalars but dims {dims:?} need {count}"
        )));
    }
    Ok(())
}

impl AxtTensor {
    pub fn new(dims: Vec<u64>, data: TensorData) -> Result<Self> {
        check_dims(&dims, data.len())?;
        Ok(Self {
            dims,
            data,
            name: None,
        })
    }

    pub fn from_f64(dims: Vec<u64>, data: Vec<f64>) -> Result<Self> {
        Self::new(dims, TensorData::F64(data))
    }

    pub fn from_f32(dims: Vec<u64>, data: Vec<f32>) -> Result<Self> {
        Self::new(dims, TensorData::F32(data))
    }

    /// Attach a label. The empty string is stored exactly like no label.
    pub fn with_name(mut self, name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.len() > u8::MAX as usize {
            return Err(Error::arg("tensor name longer than 255 bytes"));
        }
        self.name = (!name.is_empty()).then_some(name);
        Ok(self)
    }

    /// Row-major f64 tensor holding `m`.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for row in m.row_iter() {
            data.extend(row.iter());
        }
        Self {
            dims: vec![m.nrows() as u64, m.ncols() as u64],
            data: TensorData::F64(data),
            name: None,
        }
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            dims: vec![v.len() as u64],
            data: TensorData::F64(v.iter().copied().collect()),
            name: None,
        }
    }

    pub fn dims(&self) -> &[u64] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dtype(&self) -> Dtype {
        match self.data {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
        }
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Payload widened to f64.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    /// Interpret a 2-d tensor as a matrix; a 1-d tensor becomes a single row.
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        let (r, c) = match self.dims.as_slice() {
            [n] => (1, *n as usize),
            [r, c] => (*r as usize, *c as usize),
            other => return Err(Error::shape(format!("expected 1-d or 2-d tensor, got dims {other:?}"))),
        };
        Ok(DMatrix::from_row_slice(r, c, &self.to_f64_vec()))
    }

    pub fn to_vector(&self) -> Result<DVector<f64>> {
        if self.dims.len() != 1 {
            return Err(Error::shape(format!("expected 1-d tensor, got dims {:?}", self.dims)));
        }
        Ok(DVector::from_vec(self.to_f64_vec()))
    }

    /// Serialise to the AXT byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let width = self.dtype().width();
        let name = self.name.as_deref().unwrap_or("");
        let mut out = Vec::with_capacity(12 + 8 * self.dims.len() + width * self.len() + 1 + name.len());
        out.extend_from_slice(AXT_MAGIC);
        out.extend_from_slice(&self.dtype().code().to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out.push(name.len() as u8);
        out.extend_from_slice(name.as_bytes());
        out
    }

    /// Parse the AXT byte layout. `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fmt = |field: &'static str, message: String| Error::Format {
            path: path.to_path_buf(),
            field,
            message,
        };
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4).ok_or_else(|| fmt("magic", "file shorter than 4 bytes".into()))?;
        if magic != AXT_MAGIC {
            return Err(fmt("magic", format!("expected \"AXT1\", found {:?}", String::from_utf8_lossy(magic))));
        }
        let code = cur.u32().ok_or_else(|| fmt("dtype", "missing dtype code".into()))?;
        let dtype = match code {
            0 => Dtype::F32,
            1 => Dtype::F64,
            c => return Err(fmt("dtype", format!("unknown dtype code {c}"))),
        };
        let ndim = cur.u32().ok_or_else(|| fmt("ndim", "missing ndim".into()))? as usize;
        if ndim == 0 {
            return Err(fmt("ndim", "ndim must be at least 1".into()));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = cur.u64().ok_or_else(|| fmt("dims", format!("header truncated, expected {ndim} dims")))?;
            if d == 0 {
                return Err(fmt("dims", "zero extent".into()));
            }
            dims.push(d);
        }
        let count = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| fmt("dims", "extent product overflows".into()))?;
        let expected = count
            .checked_mul(dtype.width() as u64)
            .ok_or_else(|| fmt("dims", "payload size overflows".into()))?;
        let remaining = (bytes.len() - cur.pos) as u64;
        if remaining < expected {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected,
                found: remaining,
            });
        }
        let payload = cur.take(expected as usize).expect("length checked");
        let data = match dtype {
            Dtype::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        let name_len = cur.take(1).ok_or_else(|| fmt("name", "missing name length byte".into()))?[0] as usize;
        let name_bytes = cur
            .take(name_len)
            .ok_or_else(|| fmt("name", format!("name truncated, expected {name_len} bytes")))?;
        if cur.pos != bytes.len() {
            return Err(fmt("name", format!("{} trailing bytes after name", bytes.len() - cur.pos)));
        }
        let name = if name_len == 0 {
            None
        } else {
            Some(String::from_utf8(name_bytes.to_vec()).map_err(|e| fmt("name", e.to_string()))?)
        };
        Ok(Self { dims, data, name })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn write_axt(tensor: &AxtTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_axt(path: impl AsRef<Path>) -> Result<AxtTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    AxtTensor::from_bytes(&bytes, path)
}
