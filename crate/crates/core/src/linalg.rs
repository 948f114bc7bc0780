//! Dense linear-algebra helpers shared across modules.
//!
//! Matrices are `nalgebra::DMatrix<f64>` with one sample (or atom) per row.

use nalgebra::{DMatrix, DVector, RowDVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted descending.
/// Column `k` of the returned matrix is the eigenvector of `values[k]`.
pub fn sym_eigen_desc(g: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = g.nrows();
    let eig = SymmetricEigen::new(g.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Singular values in descending order.
pub fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Thin SVD with singular triplets sorted by descending singular value.
/// Returns `(singular values, right singular vectors as rows)`.
pub fn svd_right_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut rows = DMatrix::zeros(k, m.ncols());
    for (dst, &src) in order.iter().enumerate() {
        rows.set_row(dst, &v_t.row(src));
    }
    (values, rows)
}

/// Per-column mean over rows.
pub fn column_means(m: &DMatrix<f64>) -> RowDVector<f64> {
    if m.nrows() == 0 {
        return RowDVector::zeros(m.ncols());
    }
    m.row_mean()
}

/// Subtract the per-column mean from every row.
pub fn center_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = column_means(m);
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        row -= &mean;
    }
    out
}

/// Scale every row to unit Euclidean norm. Zero rows are an error.
pub fn normalize_rows(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let n = row.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::arg(format!("row {i} has zero or non-finite norm")));
        }
        row /= n;
    }
    Ok(out)
}

/// Principal-component projection of the rows of `m`.
#[derive(Debug, Clone)]
pub struct Pca {
    /// `n × k` scores of the centered rows.
    pub scores: DMatrix<f64>,
    /// `k × d` component directions (unit rows).
    pub components: DMatrix<f64>,
    /// Singular values of the centered matrix, all of them, descending.
    pub singular_values: Vec<f64>,
}

/// Project centered rows onto the top-`k` right singular vectors.
///
/// Sign convention: the largest-magnitude entry of every component is
/// positive (first such entry on ties), making the output deterministic.
pub fn pca(m: &DMatrix<f64>, k: usize) -> Pca {
    let centered = center_rows(m);
    let (values, v_rows) = svd_right_desc(&centered);
    let avail = v_rows.nrows();
    let mut components = DMatrix::zeros(k, m.ncols());
    for c in 0..k.min(avail) {
        let mut dir = v_rows.row(c).into_owned();
        let mut best = 0usize;
        for j in 0..dir.len() {
            if dir[j].abs() > dir[best].abs() {
                best = j;
            }
        }
        if dir[best] < 0.0 {
            dir = -dir;
        }
        components.set_row(c, &dir);
    }
    let scores = &centered * components.transpose();
    Pca {
        scores,
        components,
        singular_values: values,
    }
}

/// Build a matrix from row slices of equal length.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::shape("ragged rows"));
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

pub fn row_vec(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.row(i).transpose()
}

/// Effective rank as `exp(H)` of the normalised squared-singular-value distribution.
pub fn entropy_effective_rank(singular_values: &[f64]) -> f64 {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let h: f64 = singular_values
        .iter()
        .map(|s| s * s / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    h.exp()
}

/// Participation ratio `(Σλ)² / Σλ²` of a spectrum.
pub fn participation_ratio(values: &[f64]) -> f64 {
    let s: f64 = values.iter().sum();
    let s2: f64 = values.iter().map(|v| v * v).sum();
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}
