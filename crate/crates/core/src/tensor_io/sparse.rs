use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Row-compressed nonnegative code matrix. Only strictly positive entries
/// are stored; column indices within a row are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRows {
    pub fn new(n_cols: usize) -> Self {
        Self {
            n_cols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Append a row given as `(column, value)` pairs in any order.
    /// Zero values are dropped; negative, non-finite, duplicate or
    /// out-of-range entries are rejected.
    pub fn push_row(&mut self, entries: &[(usize, f64)]) -> Result<()> {
        let mut row: Vec<(usize, f64)> = entries.iter().copied().filter(|&(_, v)| v != 0.0).collect();
        row.sort_by_key(|&(c, _)| c);
        for w in row.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::arg(format!("duplicate column {}", w[0].0)));
            }
        }
        for &(c, v) in &row {
            if c >= self.n_cols {
                return Err(Error::arg(format!("column {c} out of range for {} columns", self.n_cols)));
            }
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("code values must be positive and finite, got {v}")));
            }
        }
        for (c, v) in row {
            self.indices.push(c);
            self.values.push(v);
        }
        self.indptr.push(self.indices.len());
        Ok(())
    }

    /// Keep the positive entries of a dense matrix; negative entries are an error.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        let mut out = Self::new(m.ncols());
        let mut buf = Vec::new();
        for i in 0..m.nrows() {
            buf.clear();
            buf.extend((0..m.ncols()).filter(|&j| m[(i, j)] != 0.0).map(|j| (j, m[(i, j)])));
            out.push_row(&buf)?;
        }
        Ok(out)
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[usize], &[f64])> + '_ {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows(), self.n_cols);
        for (i, (idx, val)) in self.rows().enumerate() {
            for (&j, &v) in idx.iter().zip(val) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Every stored value multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::arg("scale factor must be positive"));
        }
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        Ok(out)
    }

    /// Copy with column `col` removed from every row.
    pub fn without_column(&self, col: usize) -> Self {
        let mut out = Self::new(self.n_cols);
        let mut buf = Vec::new();
        for (idx, val) in self.rows() {
            buf.clear();
            buf.extend(idx.iter().zip(val).filter(|(&j, _)| j != col).map(|(&j, &v)| (j, v)));
            out.push_row(&buf).expect("subset of a valid row");
        }
        out
    }

    /// Restrict to a contiguous block of rows.
    pub fn row_block(&self, start: usize, end: usize) -> Self {
        let mut out = Self::new(self.n_cols);
        let mut buf = Vec::new();
        for i in start..end {
            let (idx, val) = self.row(i);
            buf.clear();
            buf.extend(idx.iter().copied().zip(val.iter().copied()));
            out.push_row(&buf).expect("copy of a valid row");
        }
        out
    }
}
