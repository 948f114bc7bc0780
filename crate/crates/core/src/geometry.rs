//! Dictionary geometry diagnostics. Everything here works on unit-normalised rows.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{normalize_rows, pca, singular_values_desc};
use crate::rng;
use crate::stats::coactivation_gram;
use crate::tensor_io::SparseRows;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    pub bins: usize,
    /// Exact enumeration of pairs below this many atoms, sampling at or above.
    pub exact_threshold: usize,
    pub sample_pairs: usize,
    pub seed: u64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            bins: 100,
            exact_threshold: 2000,
            sample_pairs: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` equally spaced edges over `[−1, 1]`; the last bin is closed.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub pairs: u64,
    /// Seed of the pair sample, or `None` when every pair was used.
    pub sample_seed: Option<u64>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

fn bin_of(x: f64, bins: usize) -> usize {
    let b = ((x.clamp(-1.0, 1.0) + 1.0) / 2.0 * bins as f64).floor() as usize;
    b.min(bins - 1)
}

/// Histogram of off-diagonal cosines between dictionary rows.
pub fn inner_product_histogram(dict: &DMatrix<f64>, cfg: &HistogramConfig) -> Result<Histogram> {
    let c = dict.nrows();
    if c < 2 {
        return Err(Error::arg("need at least two atoms"));
    }
    if cfg.bins == 0 {
        return Err(Error::arg("need at least one bin"));
    }
    let u = normalize_rows(dict)?;
    let values: Vec<f64> = if c < cfg.exact_threshold {
        (0..c)
            .into_par_iter()
            .flat_map_iter(|i| {
                let u = &u;
                ((i + 1)..c).map(move |j| u.row(i).dot(&u.row(j)))
            })
            .collect()
    } else {
        let mut rng = rng::stream(cfg.seed, "pair-sample");
        let pairs: Vec<(usize, usize)> = (0..cfg.sample_pairs)
            .map(|_| {
                let i = rng.random_range(0..c);
                let mut j = rng.random_range(0..c - 1);
                if j >= i {
                    j += 1;
                }
                (i, j)
            })
            .collect();
        pairs.par_iter().map(|&(i, j)| u.row(i).dot(&u.row(j))).collect()
    };
    let mut counts = vec![0u64; cfg.bins];
    for &v in &values {
        counts[bin_of(v, cfg.bins)] += 1;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(Histogram {
        edges: (0..=cfg.bins).map(|b| -1.0 + 2.0 * b as f64 / cfg.bins as f64).collect(),
        counts,
        pairs: values.len() as u64,
        sample_seed: (c >= cfg.exact_threshold).then_some(cfg.seed),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean,
        std: var.sqrt(),
    })
}

/// Singular values of the dictionary as given, descending.
pub fn singular_spectrum(dict: &DMatrix<f64>) -> Vec<f64> {
    singular_values_desc(dict)
}

/// `(√d − ‖v‖₁/‖v‖₂)/(√d − 1)`: 1 for one-hot vectors, 0 for constant ones.
pub fn hoyer(v: &[f64]) -> Result<f64> {
    let d = v.len();
    if d < 2 {
        return Err(Error::arg("Hoyer sparsity needs dimension ≥ 2"));
    }
    let l2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if l2 == 0.0 {
        return Err(Error::arg("Hoyer sparsity of the zero vector is undefined"));
    }
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    let sd = (d as f64).sqrt();
    Ok(((sd - l1 / l2) / (sd - 1.0)).clamp(0.0, 1.0))
}

/// Hoyer score of every row.
pub fn hoyer_scores(dict: &DMatrix<f64>) -> Result<Vec<f64>> {
    dict.row_iter()
        .map(|r| hoyer(&r.iter().copied().collect::<Vec<_>>()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntipodalPair {
    pub i: usize,
    pub j: usize,
    pub cosine: f64,
}

/// Unordered pairs with cosine ≤ −(1 − eps), most antipodal first.
pub fn antipodal_pairs(dict: &DMatrix<f64>, eps: f64) -> Result<Vec<AntipodalPair>> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::arg(format!("eps must lie in (0, 1), got {eps}")));
    }
    let u = normalize_rows(dict)?;
    let c = u.nrows();
    let mut out: Vec<AntipodalPair> = (0..c)
        .into_par_iter()
        .flat_map_iter(|i| {
            let u = &u;
            ((i + 1)..c).filter_map(move |j| {
                let cosine = u.row(i).dot(&u.row(j));
                (cosine <= -(1.0 - eps)).then_some(AntipodalPair { i, j, cosine })
            })
        })
        .collect();
    out.sort_by(|a, b| a.cosine.total_cmp(&b.cosine).then((a.i, a.j).cmp(&(b.i, b.j))));
    Ok(out)
}

/// Centered rows projected on the top two principal directions (c×2).
pub fn pca2d(dict: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if dict.nrows() < 2 {
        return Err(Error::arg("PCA needs at least two rows"));
    }
    Ok(pca(dict, 2).scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsageCorrelation {
    pub pearson_r: f64,
    pub r_squared: f64,
    pub pairs: usize,
}

/// Pearson correlation between the strict upper triangles of `ZᵀZ` and of the
/// unit-row Gram `DDᵀ`.
pub fn geometry_usage_correlation(z: &SparseRows, dict: &DMatrix<f64>) -> Result<UsageCorrelation> {
    if z.n_cols() != dict.nrows() {
        return Err(Error::shape(format!("codes have {} columns, dictionary {} rows", z.n_cols(), dict.nrows())));
    }
    let co = coactivation_gram(z);
    let u = normalize_rows(dict)?;
    let geo = &u * u.transpose();
    pearson_upper(&co, &geo)
}

/// Pearson correlation of the strict upper triangles of two square matrices.
pub fn pearson_upper(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<UsageCorrelation> {
    let c = a.nrows();
    let mut xs = Vec::with_capacity(c * c.saturating_sub(1) / 2);
    let mut ys = Vec::with_capacity(xs.capacity());
    for i in 0..c {
        for j in (i + 1)..c {
            xs.push(a[(i, j)]);
            ys.push(b[(i, j)]);
        }
    }
    if xs.len() < 2 {
        return Err(Error::arg("need at least two off-diagonal entries"));
    }
    let x = DVector::from_vec(xs);
    let y = DVector::from_vec(ys);
    let xc = x.add_scalar(-x.mean());
    let yc = y.add_scalar(-y.mean());
    let (sx, sy) = (xc.norm(), yc.norm());
    if sx == 0.0 || sy == 0.0 {
        return Err(Error::numeric("zero variance in an upper triangle; correlation undefined"));
    }
    let r = (xc.dot(&yc) / (sx * sy)).clamp(-1.0, 1.0);
    Ok(UsageCorrelation {
        pearson_r: r,
        r_squared: r * r,
        pairs: x.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub inner_product_histogram: Histogram,
    pub singular_values: Vec<f64>,
    pub hoyer_scores: Vec<f64>,
    pub antipodal_eps: f64,
    pub antipodal_pairs: Vec<AntipodalPair>,
    /// Row-major c×2.
    pub pca2d: Vec<[f64; 2]>,
    pub usage_correlation: Option<UsageCorrelation>,
}

/// All diagnostics for one dictionary, plus the usage correlation when codes are given.
pub fn geometry_report(dict: &DMatrix<f64>, codes: Option<&SparseRows>, hist: &HistogramConfig, eps: f64) -> Result<GeometryReport> {
    let p = pca2d(dict)?;
    Ok(GeometryReport {
        inner_product_histogram: inner_product_histogram(dict, hist)?,
        singular_values: singular_spectrum(dict),
        hoyer_scores: hoyer_scores(dict)?,
        antipodal_eps: eps,
        antipodal_pairs: antipodal_pairs(dict, eps)?,
        pca2d: p.row_iter().map(|r| [r[0], r[1]]).collect(),
        usage_correlation: codes.map(|z| geometry_usage_correlation(z, dict)).transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::random_sphere_dict;

    #[test]
    fn histogram_trivial_cases() {
        let cfg = HistogramConfig { bins: 10, ..Default::default() };
        let h = inner_product_histogram(&DMatrix::identity(4, 4), &cfg).unwrap();
        assert_eq!(h.counts[5], 6);
        assert_eq!(h.counts.iter().sum::<u64>(), 6);
        let anti = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -1.0, -0.5]);
        let h = inner_product_histogram(&anti, &cfg).unwrap();
        assert_eq!(h.counts[0], 1);
        assert!(h.sample_seed.is_none());
    }

    #[test]
    fn histogram_spread_matches_concentration() {
        let d = random_sphere_dict(100, 50, 9);
        let h = inner_product_histogram(&d, &HistogramConfig::default()).unwrap();
        let expect = 1.0 / 50f64.sqrt();
        assert!((h.std - expect).abs() <= 0.3 * expect, "{}", h.std);
    }

    #[test]
    fn sampled_histogram_records_seed() {
        let d = random_sphere_dict(50, 8, 1);
        let cfg = HistogramConfig { exact_threshold: 10, sample_pairs: 5000, seed: 77, ..Default::default() };
        let h = inner_product_histogram(&d, &cfg).unwrap();
        assert_eq!(h.pairs, 5000);
        assert_eq!(h.sample_seed, Some(77));
    }

    #[test]
    fn spectrum_examples() {
        assert_eq!(singular_spectrum(&DMatrix::identity(3, 3)), vec![1.0, 1.0, 1.0]);
        let u = DVector::from_vec(vec![0.6, 0.8]);
        let v = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let s = singular_spectrum(&(&u * v.transpose()));
        assert!((s[0] - 1.0).abs() < 1e-12 && s[1].abs() < 1e-12);
    }

    #[test]
    fn hoyer_examples() {
        let mut one_hot = vec![0.0; 17];
        one_hot[3] = -2.5;
        assert_eq!(hoyer(&one_hot).unwrap(), 1.0);
        assert!(hoyer(&[0.7; 9]).unwrap().abs() < 1e-12);
        assert!(hoyer(&[0.0; 4]).is_err());
        assert!(hoyer(&[1.0]).is_err());
    }

    #[test]
    fn antipodal_examples() {
        let d = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 1.0, -2.0, -4.0]);
        let p = antipodal_pairs(&d, 0.05).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].i, p[0].j), (0, 2));
        assert!((p[0].cosine + 1.0).abs() < 1e-12);
        assert!(antipodal_pairs(&DMatrix::identity(4, 4), 0.05).unwrap().is_empty());
    }

    #[test]
    fn pca_examples() {
        let line = DMatrix::from_fn(5, 3, |i, k| (i as f64) * [1.0, 2.0, -1.0][k]);
        let p = pca2d(&line).unwrap();
        assert!(p.column(1).amax() < 1e-10);
        assert!(p.column(0).sum().abs() < 1e-10);
    }

    #[test]
    fn usage_correlation_identity_case() {
        // ZᵀZ = DDᵀ when Z = Dᵀ, which is a valid code matrix for a nonnegative D
        let d = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.0, 1.0, 0.5, 0.3, 0.0, 1.0]);
        let dn = normalize_rows(&d).unwrap();
        let z = SparseRows::from_dense(&dn.transpose()).unwrap();
        let r = geometry_usage_correlation(&z, &dn).unwrap();
        assert!((r.pearson_r - 1.0).abs() < 1e-12);
        // zero variance on the co-activation side
        let z0 = SparseRows::from_dense(&DMatrix::identity(3, 3)).unwrap();
        assert!(geometry_usage_correlation(&z0, &DMatrix::identity(3, 3)).is_err());
    }
}
