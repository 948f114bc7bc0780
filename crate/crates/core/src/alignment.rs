//! Concept importance for linear probes, and task-subspace diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{center_rows, column_means, entropy_effective_rank, normalize_rows, singular_values_desc};
use crate::rng;
use crate::tensor_io::SparseRows;

/// Linear readout `y = W a + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeWeights {
    /// o×d.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub task_name: String,
}

impl ProbeWeights {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>, task_name: impl Into<String>) -> Result<Self> {
        if weights.nrows() == 0 {
            return Err(Error::arg("a probe needs at least one output"));
        }
        if bias.len() != weights.nrows() {
            return Err(Error::shape(format!("bias has length {}, probe has {} outputs", bias.len(), weights.nrows())));
        }
        if weights.iter().chain(bias.iter()).any(|x| !x.is_finite()) {
            return Err(Error::numeric("probe weights must be finite"));
        }
        Ok(Self {
            weights,
            bias,
            task_name: task_name.into(),
        })
    }

    pub fn n_outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn predict(&self, a: &DVector<f64>) -> DVector<f64> {
        &self.weights * a + &self.bias
    }
}

/// Ridge least-squares probe with an unpenalised bias.
pub fn fit_linear_probe(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64, task_name: &str) -> Result<ProbeWeights> {
    if x.nrows() != y.nrows() || x.nrows() == 0 {
        return Err(Error::shape("probe inputs and targets need the same nonzero row count"));
    }
    let (xm, ym) = (column_means(x), column_means(y));
    let xc = center_rows(x);
    let yc = center_rows(y);
    let d = x.ncols();
    let gram = xc.transpose() * &xc + DMatrix::identity(d, d) * ridge;
    let w = gram
        .cholesky()
        .ok_or_else(|| Error::numeric("probe normal equations are singular; increase the ridge"))?
        .solve(&(xc.transpose() * yc)); // d×o
    let weights = w.transpose();
    let bias = (ym - xm * &w).transpose();
    ProbeWeights::new(weights, bias, task_name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceTable {
    /// `W′ = D·Wᵀ`, c×o.
    pub alignment: DMatrix<f64>,
    /// `E(Z)` over all rows, zeros included.
    pub mean_codes: DVector<f64>,
    /// `diag(E(Z))·W′`, c×o.
    pub scores: DMatrix<f64>,
}

fn check_shapes(z: &SparseRows, dict: &DMatrix<f64>, probe: &ProbeWeights) -> Result<()> {
    if z.n_cols() != dict.nrows() {
        return Err(Error::arg(format!("codes have {} concepts, dictionary has {}", z.n_cols(), dict.nrows())));
    }
    if probe.weights.ncols() != dict.ncols() {
        return Err(Error::arg(format!("probe expects d = {}, dictionary has d = {}", probe.weights.ncols(), dict.ncols())));
    }
    if z.n_rows() == 0 {
        return Err(Error::arg("no code rows"));
    }
    Ok(())
}

/// Expected concept activation times task alignment.
pub fn importance(z: &SparseRows, dict: &DMatrix<f64>, probe: &ProbeWeights) -> Result<ImportanceTable> {
    check_shapes(z, dict, probe)?;
    let c = dict.nrows();
    let mut sums = DVector::zeros(c);
    for (idx, vals) in z.rows() {
        for (&j, &v) in idx.iter().zip(vals) {
            sums[j] += v;
        }
    }
    let mean_codes = sums / z.n_rows() as f64;
    let alignment = dict * probe.weights.transpose();
    let mut scores = alignment.clone();
    for (i, mut row) in scores.row_iter_mut().enumerate() {
        row *= mean_codes[i];
    }
    Ok(ImportanceTable {
        alignment,
        mean_codes,
        scores,
    })
}

/// Mean change of output `j` when concept `i` is removed from every code,
/// computed by decoding and running the probe on both versions.
pub fn occlusion_oracle(z: &SparseRows, dict: &DMatrix<f64>, probe: &ProbeWeights, concept: usize, output: usize) -> Result<f64> {
    check_shapes(z, dict, probe)?;
    if concept >= dict.nrows() || output >= probe.n_outputs() {
        return Err(Error::arg(format!("concept {concept} / output {output} out of range")));
    }
    let w = probe.weights.row(output);
    let mut total = 0.0;
    for (idx, vals) in z.rows() {
        let mut full = DVector::zeros(dict.ncols());
        let mut occluded = DVector::zeros(dict.ncols());
        for (&k, &v) in idx.iter().zip(vals) {
            full += dict.row(k).transpose() * v;
            if k != concept {
                occluded += dict.row(k).transpose() * v;
            }
        }
        let y_full = w.dot(&full.transpose()) + probe.bias[output];
        let y_occ = w.dot(&occluded.transpose()) + probe.bias[output];
        total += y_full - y_occ;
    }
    Ok(total / z.n_rows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankBy {
    Magnitude,
    Signed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSelect {
    Output(usize),
    /// Per concept, the maximum over outputs.
    AggregateMax,
}

/// The `k` highest-ranked concepts, ties broken by lower index.
pub fn top_concepts(table: &ImportanceTable, select: OutputSelect, k: usize, rank: RankBy) -> Result<Vec<usize>> {
    let c = table.scores.nrows();
    if k > c {
        return Err(Error::arg(format!("k = {k} exceeds {c} concepts")));
    }
    let key = |x: f64| match rank {
        RankBy::Magnitude => x.abs(),
        RankBy::Signed => x,
    };
    let value: Vec<f64> = match select {
        OutputSelect::Output(j) => {
            if j >= table.scores.ncols() {
                return Err(Error::arg(format!("output {j} out of range")));
            }
            (0..c).map(|i| key(table.scores[(i, j)])).collect()
        }
        OutputSelect::AggregateMax => (0..c)
            .map(|i| table.scores.row(i).iter().map(|&x| key(x)).fold(f64::NEG_INFINITY, f64::max))
            .collect(),
    };
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| value[b].total_cmp(&value[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetDiagnostics {
    pub indices: Vec<usize>,
    /// Histogram of pairwise |cosine| over `[0, 1]`.
    pub abs_cosine_counts: Vec<u64>,
    pub mean_abs_cosine: f64,
    pub singular_values: Vec<f64>,
    pub effective_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSubspaceReport {
    pub bins: usize,
    pub subset: SubsetDiagnostics,
    pub reference: SubsetDiagnostics,
    pub reference_seed: u64,
}

fn subset_diagnostics(dict: &DMatrix<f64>, indices: &[usize], bins: usize) -> Result<SubsetDiagnostics> {
    let rows = DMatrix::from_fn(indices.len(), dict.ncols(), |r, k| dict[(indices[r], k)]);
    let u = normalize_rows(&rows)?;
    let mut counts = vec![0u64; bins];
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..u.nrows() {
        for b in (a + 1)..u.nrows() {
            let v = u.row(a).dot(&u.row(b)).abs().min(1.0);
            counts[((v * bins as f64) as usize).min(bins - 1)] += 1;
            total += v;
            pairs += 1;
        }
    }
    let sv = singular_values_desc(&u);
    Ok(SubsetDiagnostics {
        indices: indices.to_vec(),
        abs_cosine_counts: counts,
        mean_abs_cosine: total / pairs as f64,
        effective_rank: entropy_effective_rank(&sv),
        singular_values: sv,
    })
}

/// Alignment and spectrum of a concept subset next to a same-size uniformly
/// sampled reference subset.
pub fn task_subspace_report(dict: &DMatrix<f64>, indices: &[usize], bins: usize, seed: u64) -> Result<TaskSubspaceReport> {
    let c = dict.nrows();
    if indices.len() < 2 {
        return Err(Error::arg("need at least two concepts"));
    }
    if bins == 0 {
        return Err(Error::arg("need at least one bin"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= c) {
        return Err(Error::arg(format!("concept {bad} out of range for {c} atoms")));
    }
    let mut reference = sample(&mut rng::stream(seed, "reference-subset"), c, indices.len()).into_vec();
    reference.sort_unstable();
    Ok(TaskSubspaceReport {
        bins,
        subset: subset_diagnostics(dict, indices, bins)?,
        reference: subset_diagnostics(dict, &reference, bins)?,
        reference_seed: seed,
    })
}
