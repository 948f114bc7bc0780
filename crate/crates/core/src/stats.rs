//! Activation statistics: firing counts, co-activation Gram, baselines and
//! block structure.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::dictionary::{kmeans, KMeansModel};
use crate::error::{Error, Result};
use crate::linalg::{participation_ratio, sym_eigen_desc};
use crate::rng;
use crate::tensor_io::SparseRows;

pub const DEFAULT_DENSITY_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccurrenceStats {
    pub n_rows: usize,
    pub firing_count: Vec<u64>,
    /// `E(Z_i | Z_i > 0)`; `None` for concepts that never fire.
    pub conditional_energy: Vec<Option<f64>>,
    pub dense_flags: Vec<bool>,
    pub density_threshold: f64,
}

pub fn occurrence_stats(z: &SparseRows, density_threshold: f64) -> OccurrenceStats {
    let c = z.n_cols();
    let mut count = vec![0u64; c];
    let mut sum = vec![0.0; c];
    for (idx, vals) in z.rows() {
        for (&j, &v) in idx.iter().zip(vals) {
            if v > 0.0 {
                count[j] += 1;
                sum[j] += v;
            }
        }
    }
    let n = z.n_rows();
    OccurrenceStats {
        n_rows: n,
        conditional_energy: count.iter().zip(&sum).map(|(&k, &s)| (k > 0).then(|| s / k as f64)).collect(),
        dense_flags: count.iter().map(|&k| n > 0 && k as f64 / n as f64 >= density_threshold).collect(),
        firing_count: count,
        density_threshold,
    }
}

/// `ZᵀZ`, accumulated from the stored entries of each row.
pub fn coactivation_gram(z: &SparseRows) -> DMatrix<f64> {
    let c = z.n_cols();
    let n = z.n_rows();
    // a fixed chunk size keeps the summation order independent of the thread count
    let chunk = 4096;
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    let partials: Vec<DMatrix<f64>> = starts
        .par_iter()
        .map(|&s| {
            let mut g = DMatrix::zeros(c, c);
            for i in s..(s + chunk).min(n) {
                let (idx, vals) = z.row(i);
                for (a, (&ja, &va)) in idx.iter().zip(vals).enumerate() {
                    for (&jb, &vb) in idx[a..].iter().zip(&vals[a..]) {
                        g[(ja, jb)] += va * vb;
                    }
                }
            }
            g
        })
        .collect();
    let mut g = partials.into_iter().fold(DMatrix::zeros(c, c), |acc, p| acc + p);
    // only one triangle (row-sorted indices) was filled
    for i in 0..c {
        for j in (i + 1)..c {
            let v = g[(i, j)] + g[(j, i)];
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramNormalization {
    Raw,
    /// `G_ij / √(G_ii G_jj)`, zero where a diagonal entry is zero.
    Correlation,
}

pub fn normalize_gram(g: &DMatrix<f64>, mode: GramNormalization) -> DMatrix<f64> {
    match mode {
        GramNormalization::Raw => g.clone(),
        GramNormalization::Correlation => DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| {
            let s = (g[(i, i)] * g[(j, j)]).sqrt();
            if s > 0.0 { g[(i, j)] / s } else { 0.0 }
        }),
    }
}

fn check_symmetric(g: &DMatrix<f64>) -> Result<()> {
    if !g.is_square() {
        return Err(Error::shape(format!("Gram matrix is {}×{}", g.nrows(), g.ncols())));
    }
    let tol = 1e-9 * g.amax().max(1.0);
    for i in 0..g.nrows() {
        for j in (i + 1)..g.ncols() {
            if (g[(i, j)] - g[(j, i)]).abs() > tol {
                return Err(Error::arg(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix, descending.
pub fn gram_spectrum(g: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_symmetric(g)?;
    Ok(sym_eigen_desc(g).0)
}

fn off_diagonal_frobenius(g: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            if i != j {
                s += g[(i, j)] * g[(i, j)];
            }
        }
    }
    s.sqrt()
}

const MAX_BASELINE_DRAWS: usize = 1000;

/// Random symmetric matrix with the same off-diagonal density and
/// off-diagonal Frobenius norm as `g`, and exactly its diagonal. The upper
/// triangle is drawn and mirrored, which keeps the density at `ρ`.
pub fn random_baseline(g: &DMatrix<f64>, seed: u64) -> Result<DMatrix<f64>> {
    check_symmetric(g)?;
    let c = g.nrows();
    let pairs = c * c.saturating_sub(1) / 2;
    let nonzero = (0..c).flat_map(|i| ((i + 1)..c).map(move |j| (i, j))).filter(|&(i, j)| g[(i, j)] != 0.0).count();
    let rho = if pairs == 0 { 0.0 } else { nonzero as f64 / pairs as f64 };
    let mut rng = rng::stream(seed, "random-baseline");
    let target = off_diagonal_frobenius(g);
    let mut r = DMatrix::zeros(c, c);
    // an all-zero draw cannot be rescaled; redraw from the same stream. Since
    // rho ≥ 1/pairs whenever target > 0, each draw is empty with probability ≤ 1/e.
    for _ in 0..MAX_BASELINE_DRAWS {
        for i in 0..c {
            for j in (i + 1)..c {
                let u: f64 = rng.random();
                let v: f64 = rng.random();
                let x = if v < rho { u } else { 0.0 };
                r[(i, j)] = x;
                r[(j, i)] = x;
            }
        }
        if target == 0.0 || off_diagonal_frobenius(&r) > 0.0 {
            break;
        }
    }
    if target > 0.0 {
        let have = off_diagonal_frobenius(&r);
        if have == 0.0 {
            return Err(Error::numeric("random baseline drew no off-diagonal mass; try another seed"));
        }
        r *= target / have;
    }
    for i in 0..c {
        r[(i, i)] = g[(i, i)];
    }
    Ok(r)
}

/// Strict upper-triangle positions in row-major order.
fn upper_positions(c: usize) -> Vec<(usize, usize)> {
    (0..c).flat_map(|i| ((i + 1)..c).map(move |j| (i, j))).collect()
}

/// Refill the strict upper triangle with `values[perm[k]]` at position `k` and mirror.
pub fn apply_upper_permutation(g: &DMatrix<f64>, perm: &[usize]) -> Result<DMatrix<f64>> {
    let pos = upper_positions(g.nrows());
    if perm.len() != pos.len() {
        return Err(Error::shape(format!("permutation of length {} for {} entries", perm.len(), pos.len())));
    }
    let values: Vec<f64> = pos.iter().map(|&(i, j)| g[(i, j)]).collect();
    let mut out = g.clone();
    for (k, &(i, j)) in pos.iter().enumerate() {
        let v = values[perm[k]];
        out[(i, j)] = v;
        out[(j, i)] = v;
    }
    Ok(out)
}

/// Inverse of a permutation given as an index array.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

/// Uniformly permutes the strict upper-triangle entries (mirrored to the
/// lower triangle), keeping the diagonal. Returns the permutation as well.
pub fn shuffled_baseline(g: &DMatrix<f64>, seed: u64) -> Result<(DMatrix<f64>, Vec<usize>)> {
    check_symmetric(g)?;
    let n = upper_positions(g.nrows()).len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, "shuffled-baseline"));
    Ok((apply_upper_permutation(g, &perm)?, perm))
}

/// Within/between contrast; `+∞` when no between-block mass exists.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct Contrast(pub f64);

impl Serialize for Contrast {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockOrder {
    /// New order: `permutation[k]` is the concept placed at position `k`.
    pub permutation: Vec<usize>,
    pub labels: Vec<usize>,
    pub contrast: Contrast,
}

const KMEANS_RESTARTS: u64 = 10;

/// Normalised spectral clustering of `|g|` followed by a cluster-grouping
/// permutation and the within/between contrast of off-diagonal magnitudes.
pub fn block_reorder(g: &DMatrix<f64>, n_blocks: usize, seed: u64) -> Result<BlockOrder> {
    check_symmetric(g)?;
    let c = g.nrows();
    if n_blocks < 2 || n_blocks > c {
        return Err(Error::arg(format!("need 2 ≤ n_blocks ≤ {c}, got {n_blocks}")));
    }
    let a = DMatrix::from_fn(c, c, |i, j| if i == j { 0.0 } else { g[(i, j)].abs() });
    let deg: Vec<f64> = a.row_iter().map(|r| r.sum()).collect();
    if deg.iter().all(|&d| d == 0.0) {
        return Err(Error::numeric("all off-diagonal entries are zero; contrast undefined"));
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    let l = DMatrix::from_fn(c, c, |i, j| a[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    let (_, vecs) = sym_eigen_desc(&l);
    let mut emb = vecs.columns(0, n_blocks).into_owned();
    for mut row in emb.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    let mut best: Option<KMeansModel> = None;
    for r in 0..KMEANS_RESTARTS {
        let m = kmeans(&emb, n_blocks, 100, rng::derive_seed(seed, &format!("spectral-kmeans-{r}")))?;
        if best.as_ref().is_none_or(|b| m.inertia < b.inertia) {
            best = Some(m);
        }
    }
    let raw = best.expect("at least one restart").assignments;
    // relabel clusters by first appearance so labels are canonical
    let mut map = vec![usize::MAX; n_blocks];
    let mut next = 0;
    let labels: Vec<usize> = raw
        .iter()
        .map(|&k| {
            if map[k] == usize::MAX {
                map[k] = next;
                next += 1;
            }
            map[k]
        })
        .collect();
    let mut permutation: Vec<usize> = (0..c).collect();
    permutation.sort_by_key(|&i| (labels[i], i));

    let (mut within, mut nw, mut between, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..c {
        for j in (i + 1)..c {
            if labels[i] == labels[j] {
                within += a[(i, j)];
                nw += 1;
            } else {
                between += a[(i, j)];
                nb += 1;
            }
        }
    }
    if nb == 0 || nw == 0 {
        return Err(Error::numeric("clustering produced a degenerate partition; contrast undefined"));
    }
    let (mw, mb) = (within / nw as f64, between / nb as f64);
    let contrast = if mb == 0.0 { f64::INFINITY } else { mw / mb };
    Ok(BlockOrder {
        permutation,
        labels,
        contrast: Contrast(contrast),
    })
}

/// `(Σλ)²/Σλ²` of the spectrum, with negative rounding noise clipped.
pub fn spectrum_effective_rank(spectrum: &[f64]) -> f64 {
    let clipped: Vec<f64> = spectrum.iter().map(|&l| l.max(0.0)).collect();
    participation_ratio(&clipped)
}

/// Symmetric `c×c` Gram with `n_blocks` equal blocks: `within` inside blocks,
/// `between` across, plus symmetric uniform noise in `[−noise, noise]`; unit diagonal.
pub fn planted_block_gram(c: usize, n_blocks: usize, within: f64, between: f64, noise: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = rng::stream(seed, "planted-gram");
    let block = |i: usize| i * n_blocks / c;
    let mut g = DMatrix::identity(c, c);
    for i in 0..c {
        for j in (i + 1)..c {
            let base = if block(i) == block(j) { within } else { between };
            let v = base + noise * (2.0 * rng.random::<f64>() - 1.0);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    pub occurrence: OccurrenceStats,
    pub normalization: GramNormalization,
    pub spectrum: Vec<f64>,
    pub effective_rank: f64,
    pub random_spectrum: Option<Vec<f64>>,
    pub shuffled_spectrum: Option<Vec<f64>>,
    pub random_effective_rank: Option<f64>,
    pub shuffled_effective_rank: Option<f64>,
    pub blocks: Option<BlockOrder>,
}

pub fn stats_report(
    z: &SparseRows,
    normalization: GramNormalization,
    baselines: bool,
    n_blocks: Option<usize>,
    seed: u64,
) -> Result<StatsReport> {
    let g = normalize_gram(&coactivation_gram(z), normalization);
    let spectrum = gram_spectrum(&g)?;
    let (rs, ss) = if baselines {
        let r = gram_spectrum(&random_baseline(&g, rng::derive_seed(seed, "random"))?)?;
        let s = gram_spectrum(&shuffled_baseline(&g, rng::derive_seed(seed, "shuffled"))?.0)?;
        (Some(r), Some(s))
    } else {
        (None, None)
    };
    Ok(StatsReport {
        occurrence: occurrence_stats(z, DEFAULT_DENSITY_THRESHOLD),
        normalization,
        effective_rank: spectrum_effective_rank(&spectrum),
        random_effective_rank: rs.as_deref().map(spectrum_effective_rank),
        shuffled_effective_rank: ss.as_deref().map(spectrum_effective_rank),
        spectrum,
        random_spectrum: rs,
        shuffled_spectrum: ss,
        blocks: n_blocks.map(|k| block_reorder(&g, k, rng::derive_seed(seed, "blocks"))).transpose()?,
    })
}
