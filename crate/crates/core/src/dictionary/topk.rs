use std::cmp::Ordering;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

// larger value first; on equal values the smaller (row, col) wins
fn rank(a: &(f64, usize, usize), b: &(f64, usize, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}

fn keep_top(mut cands: Vec<(f64, usize, usize)>, budget: usize, out: &mut DMatrix<f64>) {
    if cands.len() > budget {
        if budget == 0 {
            return;
        }
        cands.select_nth_unstable_by(budget - 1, rank);
        cands.truncate(budget);
    }
    for (v, i, j) in cands {
        out[(i, j)] = v;
    }
}

/// Keep the `budget` largest strictly positive entries of the whole block
/// and zero everything else.
pub fn batch_topk(values: &DMatrix<f64>, budget: usize) -> Result<DMatrix<f64>> {
    if budget > values.len() {
        return Err(Error::arg(format!(
            "budget {budget} exceeds the {} entries of the batch",
            values.len()
        )));
    }
    let mut cands = Vec::new();
    for j in 0..values.ncols() {
        for i in 0..values.nrows() {
            let v = values[(i, j)];
            if v > 0.0 {
                cands.push((v, i, j));
            }
        }
    }
    let mut out = DMatrix::zeros(values.nrows(), values.ncols());
    keep_top(cands, budget, &mut out);
    Ok(out)
}

/// Per-row variant: keep the `k` largest positive entries of every row.
pub fn row_topk(values: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(values.nrows(), values.ncols());
    for i in 0..values.nrows() {
        let cands: Vec<_> = (0..values.ncols())
            .filter(|&j| values[(i, j)] > 0.0)
            .map(|j| (values[(i, j)], i, j))
            .collect();
        keep_top(cands, k.min(values.ncols()), &mut out);
    }
    out
}
