//! Where concepts fire within the token sequence, and how position is encoded
//! in the embeddings.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dictionary::{Adam, TrainConfig};
use crate::error::{Error, Result};
use crate::linalg::{center_rows, pca, svd_right_desc};
use crate::rng;
use crate::tensor_io::{ActivationSet, SparseRows, TokenLayout};

pub const DEFAULT_EXCLUSIVITY_EPS: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusivity {
    None,
    ClsOnly,
    RegOnly,
    SpatialOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Footprint {
    /// Mean activation per token position.
    pub omega: Vec<f64>,
    pub entropy_bits: f64,
    pub exclusivity: Exclusivity,
    /// Share of the total mass on the token-type subset named by `exclusivity`
    /// (0 when it is `None`).
    pub mass_fraction: f64,
}

fn check_rows(z: &SparseRows, layout: &TokenLayout) -> Result<usize> {
    let t = layout.n_tokens();
    if z.n_rows() % t != 0 {
        return Err(Error::shape(format!("{} code rows do not factor into images of {t} tokens", z.n_rows())));
    }
    Ok(z.n_rows() / t)
}

/// Mean activation of every concept at every token position, `c × t`.
pub fn position_means(z: &SparseRows, layout: &TokenLayout) -> Result<DMatrix<f64>> {
    let n = check_rows(z, layout)?;
    let t = layout.n_tokens();
    let mut omega = DMatrix::zeros(z.n_cols(), t);
    for (r, (idx, vals)) in z.rows().enumerate() {
        for (&i, &v) in idx.iter().zip(vals) {
            omega[(i, r % t)] += v;
        }
    }
    if n > 0 {
        omega /= n as f64;
    }
    Ok(omega)
}

/// Shannon entropy in bits of `omega` normalised to a probability vector;
/// 0 for an all-zero vector.
pub fn entropy_bits(omega: &[f64]) -> f64 {
    let total: f64 = omega.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    omega
        .iter()
        .map(|&w| w / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.log2())
        .sum::<f64>()
        .max(0.0)
}

/// A subset is exclusive when the mass outside it is at most `eps` of the total.
fn classify(omega: &[f64], layout: &TokenLayout, eps: f64) -> (Exclusivity, f64) {
    let total: f64 = omega.iter().sum();
    if total <= 0.0 {
        return (Exclusivity::None, 0.0);
    }
    let mut best = (Exclusivity::None, 0.0);
    for (kind, range) in [
        (Exclusivity::ClsOnly, layout.cls_range()),
        (Exclusivity::RegOnly, layout.reg_range()),
        (Exclusivity::SpatialOnly, layout.patch_range()),
    ] {
        if range.is_empty() {
            continue;
        }
        let inside: f64 = omega[range].iter().sum();
        let outside = total - inside;
        if outside <= eps * total && inside / total > best.1 {
            best = (kind, inside / total);
        }
    }
    best
}

pub fn footprint(z: &SparseRows, layout: &TokenLayout, concept: usize, eps: f64) -> Result<Footprint> {
    if concept >= z.n_cols() {
        return Err(Error::arg(format!("concept {concept} out of range for {} concepts", z.n_cols())));
    }
    check_eps(eps)?;
    let means = position_means(z, layout)?;
    Ok(footprint_from_omega(means.row(concept).iter().copied().collect(), layout, eps))
}

fn footprint_from_omega(omega: Vec<f64>, layout: &TokenLayout, eps: f64) -> Footprint {
    let (exclusivity, mass_fraction) = classify(&omega, layout, eps);
    Footprint {
        entropy_bits: entropy_bits(&omega),
        omega,
        exclusivity,
        mass_fraction,
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::arg(format!("exclusivity eps must lie in [0, 1), got {eps}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExclusivityCensus {
    pub eps: f64,
    pub none: usize,
    pub cls_only: usize,
    pub reg_only: usize,
    pub spatial_only: usize,
    pub per_concept: Vec<Exclusivity>,
    pub entropy_bits: Vec<f64>,
}

pub fn exclusivity_census(z: &SparseRows, layout: &TokenLayout, eps: f64) -> Result<ExclusivityCensus> {
    check_eps(eps)?;
    let means = position_means(z, layout)?;
    let mut census = ExclusivityCensus {
        eps,
        none: 0,
        cls_only: 0,
        reg_only: 0,
        spatial_only: 0,
        per_concept: Vec::with_capacity(z.n_cols()),
        entropy_bits: Vec::with_capacity(z.n_cols()),
    };
    for row in means.row_iter() {
        let fp = footprint_from_omega(row.iter().copied().collect(), layout, eps);
        match fp.exclusivity {
            Exclusivity::None => census.none += 1,
            Exclusivity::ClsOnly => census.cls_only += 1,
            Exclusivity::RegOnly => census.reg_only += 1,
            Exclusivity::SpatialOnly => census.spatial_only += 1,
        }
        census.per_concept.push(fp.exclusivity);
        census.entropy_bits.push(fp.entropy_bits);
    }
    Ok(census)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisSource {
    Classifier,
    DirectAverage,
}

/// One decoding vector per token position.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionBasis {
    /// t × d.
    pub p_matrix: DMatrix<f64>,
    pub layer_index: Option<i64>,
    pub source: BasisSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub train: TrainConfig,
    /// Fraction of images held out for evaluation.
    pub holdout: f64,
    /// Start from the shared-isotropic-variance class-mean classifier instead of zero.
    pub warm_start: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            holdout: 0.2,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecoderFit {
    pub basis: PositionBasis,
    pub bias: DVector<f64>,
    pub train_accuracy: f64,
    /// Accuracy on the held-out images.
    pub accuracy: f64,
    pub test_images: Vec<usize>,
    /// Set for single-image input, where train and test coincide.
    pub degenerate: bool,
}

fn softmax_rows(logits: &mut DMatrix<f64>) {
    for mut row in logits.row_iter_mut() {
        let m = row.max();
        row.apply(|x| *x = (*x - m).exp());
        let s = row.sum();
        row /= s;
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}

fn decoder_accuracy(a: &ActivationSet, images: &[usize], w: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    let t = a.n_tokens();
    let mut correct = 0usize;
    for &img in images {
        let x = DMatrix::from_fn(t, a.dim(), |j, k| a.token(img, j)[k]);
        let mut logits = x * w.transpose();
        for mut row in logits.row_iter_mut() {
            row += b.transpose();
        }
        correct += (0..t).filter(|&j| argmax(&logits.row(j).iter().copied().collect::<Vec<_>>()) == j).count();
    }
    correct as f64 / (images.len() * t) as f64
}

/// Weights `μ_j/σ²` and biases `−‖μ_j‖²/(2σ²)` from the per-position means
/// `μ_j` and pooled within-position variance `σ²` of the training tokens.
fn class_mean_start(a: &ActivationSet, train: &[usize]) -> Vec<f64> {
    let (t, d) = (a.n_tokens(), a.dim());
    let mut mu = vec![0.0; t * d];
    for &i in train {
        for j in 0..t {
            for (m, &x) in mu[j * d..(j + 1) * d].iter_mut().zip(a.token(i, j)) {
                *m += x;
            }
        }
    }
    mu.iter_mut().for_each(|m| *m /= train.len() as f64);
    let (mut within, mut power) = (0.0, 0.0);
    for &i in train {
        for j in 0..t {
            for (&m, &x) in mu[j * d..(j + 1) * d].iter().zip(a.token(i, j)) {
                within += (x - m) * (x - m);
                power += x * x;
            }
        }
    }
    let count = (train.len() * t * d) as f64;
    // noiseless data would give σ² = 0; keep the logits finite
    let var = (within / count).max(1e-6 * power / count).max(f64::MIN_POSITIVE);
    let mut params = vec![0.0; t * d + t];
    for j in 0..t {
        let row = &mu[j * d..(j + 1) * d];
        for k in 0..d {
            params[j * d + k] = row[k] / var;
        }
        params[t * d + j] = -row.iter().map(|x| x * x).sum::<f64>() / (2.0 * var);
    }
    params
}

/// Multinomial logistic regression from token embedding to token index,
/// trained with Adam on a seeded image-level split.
pub fn fit_position_decoder(a: &ActivationSet, cfg: &DecoderConfig) -> Result<DecoderFit> {
    cfg.train.validate()?;
    if !(cfg.holdout > 0.0 && cfg.holdout < 1.0) {
        return Err(Error::arg("holdout must lie in (0, 1)"));
    }
    let (n, t, d) = (a.n_images(), a.n_tokens(), a.dim());
    let mut images: Vec<usize> = (0..n).collect();
    images.shuffle(&mut rng::stream(cfg.train.seed, "decoder-split"));
    let degenerate = n < 2;
    let (train, test) = if degenerate {
        (images.clone(), images.clone())
    } else {
        let n_test = ((n as f64 * cfg.holdout).round() as usize).clamp(1, n - 1);
        let (test, train) = images.split_at(n_test);
        let (mut train, mut test) = (train.to_vec(), test.to_vec());
        train.sort_unstable();
        test.sort_unstable();
        (train, test)
    };

    let samples: Vec<(usize, usize)> = train.iter().flat_map(|&i| (0..t).map(move |j| (i, j))).collect();
    let mut params = if cfg.warm_start {
        class_mean_start(a, &train)
    } else {
        vec![0.0; t * d + t]
    };
    let mut adam = Adam::new(params.len());
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.train.epochs {
        order.shuffle(&mut rng::trial(cfg.train.seed, "decoder-epoch", epoch as u64));
        for batch in order.chunks(cfg.train.batch_size) {
            let bsz = batch.len();
            let x = DMatrix::from_fn(bsz, d, |r, k| {
                let (i, j) = samples[batch[r]];
                a.token(i, j)[k]
            });
            let w = DMatrix::from_row_slice(t, d, &params[..t * d]);
            let bias = DVector::from_row_slice(&params[t * d..]);
            let mut probs = &x * w.transpose();
            for mut row in probs.row_iter_mut() {
                row += bias.transpose();
            }
            softmax_rows(&mut probs);
            for (r, &s) in batch.iter().enumerate() {
                probs[(r, samples[s].1)] -= 1.0;
            }
            probs /= bsz as f64;
            let gw = probs.transpose() * &x;
            for j in 0..t {
                for k in 0..d {
                    grad[j * d + k] = gw[(j, k)];
                }
                grad[t * d + j] = probs.column(j).sum();
            }
            adam.step(&mut params, &grad, &cfg.train);
        }
    }
    let w = DMatrix::from_row_slice(t, d, &params[..t * d]);
    let bias = DVector::from_row_slice(&params[t * d..]);
    Ok(DecoderFit {
        train_accuracy: decoder_accuracy(a, &train, &w, &bias),
        accuracy: decoder_accuracy(a, &test, &w, &bias),
        basis: PositionBasis {
            p_matrix: w,
            layer_index: a.layer_index(),
            source: BasisSource::Classifier,
        },
        bias,
        test_images: test,
        degenerate,
    })
}

/// Mean embedding at every position over images.
pub fn direct_average_basis(a: &ActivationSet) -> PositionBasis {
    let (n, t, d) = (a.n_images(), a.n_tokens(), a.dim());
    let mut p = DMatrix::zeros(t, d);
    for i in 0..n {
        for j in 0..t {
            for (k, &v) in a.token(i, j).iter().enumerate() {
                p[(j, k)] += v;
            }
        }
    }
    PositionBasis {
        p_matrix: p / n as f64,
        layer_index: a.layer_index(),
        source: BasisSource::DirectAverage,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankProfile {
    pub stable_rank: f64,
    pub effective_rank: f64,
    pub energy: f64,
    pub rank_at_energy: usize,
    pub singular_values: Vec<f64>,
}

/// Rank summaries of the mean-centred basis.
pub fn basis_rank_profile(p: &PositionBasis, energy: f64) -> Result<RankProfile> {
    if !(energy > 0.0 && energy <= 1.0) {
        return Err(Error::arg(format!("energy must lie in (0, 1], got {energy}")));
    }
    let centered = center_rows(&p.p_matrix);
    let (sv, _) = svd_right_desc(&centered);
    let total: f64 = sv.iter().map(|s| s * s).sum();
    if !(total > 0.0) {
        return Err(Error::numeric("position basis is constant after centring"));
    }
    let probs: Vec<f64> = sv.iter().map(|s| s * s / total).collect();
    let h: f64 = probs.iter().filter(|&&q| q > 0.0).map(|&q| -q * q.ln()).sum();
    let mut acc = 0.0;
    let mut rank = probs.len();
    for (r, q) in probs.iter().enumerate() {
        acc += q;
        // tolerate rounding in the running sum when energy = 1
        if acc >= energy * (1.0 - 1e-12) {
            rank = r + 1;
            break;
        }
    }
    Ok(RankProfile {
        stable_rank: total / (sv[0] * sv[0]),
        effective_rank: h.exp(),
        energy,
        rank_at_energy: rank,
        singular_values: sv,
    })
}

/// Project every token onto the orthogonal complement of the top-`r` right
/// singular vectors of the mean-centred basis.
pub fn remove_position(a: &ActivationSet, p: &PositionBasis, r: usize) -> Result<ActivationSet> {
    let (t, d) = (a.n_tokens(), a.dim());
    if p.p_matrix.shape() != (t, d) {
        return Err(Error::shape(format!("basis is {:?}, activations need {t}×{d}", p.p_matrix.shape())));
    }
    if r > t.min(d) {
        return Err(Error::arg(format!("r = {r} exceeds min(t, d) = {}", t.min(d))));
    }
    if r == 0 {
        return Ok(a.clone());
    }
    let (_, v) = svd_right_desc(&center_rows(&p.p_matrix));
    let v = v.rows(0, r).into_owned();
    let mut data = a.raw().to_vec();
    for tok in data.chunks_mut(d) {
        let x = DVector::from_column_slice(tok);
        let y = &x - v.transpose() * (&v * &x);
        tok.copy_from_slice(y.as_slice());
    }
    a.with_data(data)
}

/// Per-image PCA of the patch tokens, each component min-max scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaMap {
    pub grid: usize,
    pub channels: usize,
    /// Row-major `grid × grid × channels`.
    pub values: Vec<f64>,
}

impl PcaMap {
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.values[(row * self.grid + col) * self.channels + ch]
    }

    /// Binary PPM (P6, 8-bit). Needs exactly three channels.
    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if self.channels != 3 {
            return Err(Error::arg("PPM output needs three channels"));
        }
        let mut buf = format!("P6\n{} {}\n255\n", self.grid, self.grid).into_bytes();
        buf.extend(self.values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// One line per cell: `row,col,c0,c1,…`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col");
        for c in 0..self.channels {
            out.push_str(&format!(",c{c}"));
        }
        out.push('\n');
        for r in 0..self.grid {
            for c in 0..self.grid {
                out.push_str(&format!("{r},{c}"));
                for ch in 0..self.channels {
                    out.push_str(&format!(",{}", self.get(r, c, ch)));
                }
                out.push('\n');
            }
        }
        out
    }
}

pub fn image_pca_map(a: &ActivationSet, image: usize, n_components: usize) -> Result<PcaMap> {
    if image >= a.n_images() {
        return Err(Error::arg(format!("image {image} out of range for {} images", a.n_images())));
    }
    let layout = a.layout();
    if n_components == 0 || layout.n_patch < n_components {
        return Err(Error::arg(format!("need 1 ≤ components ≤ n_patch = {}", layout.n_patch)));
    }
    let patches = a.image_patches(image);
    let fit = pca(&patches, n_components);
    let top = fit.singular_values.first().copied().unwrap_or(0.0);
    let scale = patches.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    if top <= 1e-12 * scale * (layout.n_patch as f64).sqrt() {
        return Err(Error::numeric("patch tokens have zero variance"));
    }
    let np = layout.n_patch;
    let mut values = vec![0.5; np * n_components];
    for ch in 0..n_components {
        let sv = fit.singular_values.get(ch).copied().unwrap_or(0.0);
        if sv <= 1e-9 * top {
            continue;
        }
        let col = fit.scores.column(ch);
        let (lo, hi) = (col.min(), col.max());
        if hi - lo <= 0.0 {
            continue;
        }
        for p in 0..np {
            values[p * n_components + ch] = ((col[p] - lo) / (hi - lo)).clamp(0.0, 1.0);
        }
    }
    Ok(PcaMap {
        grid: layout.grid_side(),
        channels: n_components,
        values,
    })
}

/// For each of the image's top `n_components` patch principal directions, the
/// norm of its projection onto the span of the top-`r` position directions:
/// 1 for a component lying in the position subspace, 0 for one orthogonal to it.
pub fn position_component_correlation(a: &ActivationSet, image: usize, p: &PositionBasis, r: usize, n_components: usize) -> Result<Vec<f64>> {
    let (t, d) = (a.n_tokens(), a.dim());
    if p.p_matrix.shape() != (t, d) {
        return Err(Error::shape(format!("basis is {:?}, activations need {t}×{d}", p.p_matrix.shape())));
    }
    if r == 0 || r > t.min(d) {
        return Err(Error::arg(format!("need 1 ≤ r ≤ min(t, d) = {}", t.min(d))));
    }
    if image >= a.n_images() {
        return Err(Error::arg(format!("image {image} out of range for {} images", a.n_images())));
    }
    if n_components == 0 || n_components > a.layout().n_patch.min(d) {
        return Err(Error::arg("need 1 ≤ components ≤ min(n_patch, d)"));
    }
    let (_, v) = svd_right_desc(&center_rows(&p.p_matrix));
    let v = v.rows(0, r).into_owned();
    let fit = pca(&a.image_patches(image), n_components);
    Ok(fit
        .components
        .row_iter()
        .map(|c| (&v * c.transpose()).norm().min(1.0))
        .collect())
}

/// Synthetic tokens whose first two coordinates are the patch's grid position
/// scaled to `[-1, 1]`, with i.i.d. Gaussian noise of stdev `noise` on every
/// coordinate.
pub fn planted_2d(n_images: usize, grid: usize, d: usize, noise: f64, seed: u64) -> Result<ActivationSet> {
    if d < 2 || grid < 2 {
        return Err(Error::arg("planted positions need d ≥ 2 and grid ≥ 2"));
    }
    let layout = TokenLayout::patches_only(grid * grid)?;
    let mut rng = rng::stream(seed, "planted-2d");
    let step = 2.0 / (grid - 1) as f64;
    let mut data = Vec::with_capacity(n_images * grid * grid * d);
    for _ in 0..n_images {
        for p in 0..grid * grid {
            let (row, col) = (p / grid, p % grid);
            for k in 0..d {
                let base = match k {
                    0 => -1.0 + step * col as f64,
                    1 => -1.0 + step * row as f64,
                    _ => 0.0,
                };
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(base + noise * z);
            }
        }
    }
    ActivationSet::new(n_images, d, data, layout, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codes_on(layout: &TokenLayout, n: usize, c: usize, fire: impl Fn(usize, usize) -> Vec<(usize, f64)>) -> SparseRows {
        let mut z = SparseRows::new(c);
        for i in 0..n {
            for j in 0..layout.n_tokens() {
                z.push_row(&fire(i, j)).unwrap();
            }
        }
        z
    }

    #[test]
    fn footprint_examples() {
        let layout = TokenLayout::vit_with_registers();
        let cls = codes_on(&layout, 3, 1, |_, j| if j == 0 { vec![(0, 1.0)] } else { vec![] });
        let fp = footprint(&cls, &layout, 0, DEFAULT_EXCLUSIVITY_EPS).unwrap();
        assert_eq!(fp.entropy_bits, 0.0);
        assert_eq!(fp.exclusivity, Exclusivity::ClsOnly);

        let uniform = codes_on(&layout, 2, 1, |_, _| vec![(0, 0.5)]);
        let fp = footprint(&uniform, &layout, 0, DEFAULT_EXCLUSIVITY_EPS).unwrap();
        assert!((fp.entropy_bits - 261f64.log2()).abs() < 1e-12);
        assert!((fp.entropy_bits - 8.0279).abs() < 1e-4);
        // 256 of 261 tokens are patches, so uniform firing is 98% spatial
        assert_eq!(fp.exclusivity, Exclusivity::SpatialOnly);
        assert_eq!(footprint(&uniform, &layout, 0, 0.01).unwrap().exclusivity, Exclusivity::None);

        // 0.95 of the mass on the registers, the rest spread over the patches
        let reg = codes_on(&layout, 1, 1, |_, j| match j {
            1..=4 => vec![(0, 0.95 / 4.0)],
            5.. => vec![(0, 0.05 / 256.0)],
            _ => vec![],
        });
        let fp = footprint(&reg, &layout, 0, 0.1).unwrap();
        assert_eq!(fp.exclusivity, Exclusivity::RegOnly);
        assert!((fp.mass_fraction - 0.95).abs() < 1e-12);
        assert_eq!(footprint(&reg, &layout, 0, 0.01).unwrap().exclusivity, Exclusivity::None);

        let silent = SparseRows::zeros(2 * 261, 1);
        let fp = footprint(&silent, &layout, 0, 0.05).unwrap();
        assert_eq!((fp.entropy_bits, fp.exclusivity), (0.0, Exclusivity::None));
        assert!(footprint(&SparseRows::zeros(5, 1), &layout, 0, 0.05).is_err());
    }

    #[test]
    fn census_counts_planted_concepts() {
        let layout = TokenLayout::vit_with_registers();
        let z = codes_on(&layout, 2, 6, |_, j| match j {
            0 => vec![(0, 1.0), (1, 2.0), (2, 0.5), (5, 1.0)],
            1..=4 => vec![(3, 1.0), (5, 1.0)],
            _ => vec![(4, 1.0), (5, 1.0)],
        });
        let census = exclusivity_census(&z, &layout, 0.0).unwrap();
        assert_eq!((census.cls_only, census.reg_only, census.spatial_only, census.none), (3, 1, 1, 1));
        let empty = exclusivity_census(&SparseRows::zeros(0, 4), &layout, 0.05).unwrap();
        assert_eq!(empty.none, 4);
    }

    #[test]
    fn entropy_ignores_positive_scale() {
        let z = [0.3, 1.2, 0.0, 4.0];
        let scaled: Vec<f64> = z.iter().map(|x| x * 17.5).collect();
        assert!((entropy_bits(&z) - entropy_bits(&scaled)).abs() < 1e-12);
    }

    #[test]
    fn direct_average_matches_loops() {
        let a = planted_2d(3, 3, 4, 0.5, 1).unwrap();
        let p = direct_average_basis(&a);
        for j in 0..9 {
            for k in 0..4 {
                let mut s = 0.0;
                for i in 0..3 {
                    s += a.raw()[(i * 9 + j) * 4 + k];
                }
                assert!((p.p_matrix[(j, k)] - s / 3.0).abs() < 1e-12);
            }
        }
        let one = planted_2d(1, 3, 4, 0.5, 1).unwrap();
        let p1 = direct_average_basis(&one);
        for j in 0..9 {
            assert_eq!(p1.p_matrix.row(j).iter().copied().collect::<Vec<_>>(), one.token(0, j));
        }
    }

    #[test]
    fn rank_profile_examples() {
        let basis = |m| PositionBasis {
            p_matrix: m,
            layer_index: None,
            source: BasisSource::DirectAverage,
        };
        let planted = direct_average_basis(&planted_2d(20, 4, 8, 0.0, 0).unwrap());
        assert_eq!(basis_rank_profile(&planted, 0.99).unwrap().rank_at_energy, 2);
        // rows ±e_k stay orthogonal-with-equal-norm after centring
        let mut pm = DMatrix::zeros(4, 2);
        pm[(0, 0)] = 1.0;
        pm[(1, 0)] = -1.0;
        pm[(2, 1)] = 1.0;
        pm[(3, 1)] = -1.0;
        let prof = basis_rank_profile(&basis(pm), 0.99).unwrap();
        assert!((prof.stable_rank - 2.0).abs() < 1e-12);
        assert!((prof.effective_rank - 2.0).abs() < 1e-12);
        let line = DMatrix::from_fn(5, 3, |j, k| if k == 0 { j as f64 } else { 0.0 });
        assert!((basis_rank_profile(&basis(line), 0.5).unwrap().stable_rank - 1.0).abs() < 1e-12);
        assert!(basis_rank_profile(&basis(DMatrix::zeros(3, 3)), 0.9).is_err());
    }

    #[test]
    fn removal_is_idempotent_and_kills_planted_subspace() {
        let a = planted_2d(4, 4, 6, 0.0, 2).unwrap();
        let p = direct_average_basis(&a);
        assert_eq!(remove_position(&a, &p, 0).unwrap(), a);
        let once = remove_position(&a, &p, 2).unwrap();
        assert!(once.raw().iter().all(|x| x.abs() < 1e-12));
        let noisy = planted_2d(4, 4, 6, 0.3, 2).unwrap();
        let once = remove_position(&noisy, &p, 2).unwrap();
        let twice = remove_position(&once, &p, 2).unwrap();
        for (x, y) in once.raw().iter().zip(twice.raw()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(remove_position(&a, &p, 7).is_err());
    }

    #[test]
    fn decoder_on_one_hot_positions() {
        let t = 16;
        let layout = TokenLayout::patches_only(t).unwrap();
        let n = 10;
        let mut data = Vec::new();
        for _ in 0..n {
            for j in 0..t {
                data.extend((0..t).map(|k| if k == j { 1.0 } else { 0.0 }));
            }
        }
        let a = ActivationSet::new(n, t, data, layout, Some(3)).unwrap();
        let cfg = DecoderConfig {
            train: TrainConfig {
                epochs: 20,
                batch_size: 32,
                learning_rate: 0.05,
                ..TrainConfig::default()
            },
            holdout: 0.2,
            warm_start: false,
        };
        let fit = fit_position_decoder(&a, &cfg).unwrap();
        assert!(fit.accuracy >= 0.999);
        assert_eq!(fit.test_images.len(), 2);
        assert!(!fit.degenerate);
        assert_eq!(fit.basis.layer_index, Some(3));
        let single = ActivationSet::new(1, t, a.raw()[..t * t].to_vec(), layout, None).unwrap();
        assert!(fit_position_decoder(&single, &cfg).unwrap().degenerate);
    }

    #[test]
    fn decoder_on_noise_is_at_chance() {
        let layout = TokenLayout::patches_only(16).unwrap();
        let mut r = rng::stream(5, "t");
        let n = 200;
        let data: Vec<f64> = (0..n * 16 * 8)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                z
            })
            .collect();
        let a = ActivationSet::new(n, 8, data, layout, None).unwrap();
        let cfg = DecoderConfig {
            train: TrainConfig {
                epochs: 5,
                ..TrainConfig::default()
            },
            ..DecoderConfig::default()
        };
        let fit = fit_position_decoder(&a, &cfg).unwrap();
        assert!((fit.accuracy - 1.0 / 16.0).abs() <= 0.05, "{}", fit.accuracy);
    }

    #[test]
    fn pca_map_degenerate_and_equivariant() {
        let layout = TokenLayout::new(1, 0, 9).unwrap();
        let mut data = vec![7.0; 3]; // cls token, ignored
        for p in 0..9 {
            data.extend([p as f64, 2.0 * p as f64, 1.0]);
        }
        let a = ActivationSet::new(1, 3, data.clone(), layout, None).unwrap();
        let map = image_pca_map(&a, 0, 3).unwrap();
        let ch0: Vec<f64> = (0..9).map(|p| map.values[p * 3]).collect();
        assert_eq!(ch0.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(ch0.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
        assert!((0..9).all(|p| map.values[p * 3 + 1] == 0.5 && map.values[p * 3 + 2] == 0.5));

        // reverse the patch order
        let mut rev = vec![7.0; 3];
        for p in (0..9).rev() {
            rev.extend([p as f64, 2.0 * p as f64, 1.0]);
        }
        let b = ActivationSet::new(1, 3, rev, layout, None).unwrap();
        let mb = image_pca_map(&b, 0, 3).unwrap();
        for p in 0..9 {
            assert!((mb.values[(8 - p) * 3] - map.values[p * 3]).abs() < 1e-12);
        }

        let flat = ActivationSet::new(1, 3, vec![1.0; 30], layout, None).unwrap();
        assert!(image_pca_map(&flat, 0, 3).is_err());
    }

    #[test]
    fn position_components_are_flagged() {
        let a = planted_2d(6, 8, 16, 0.01, 2).unwrap();
        let p = direct_average_basis(&a);
        let corr = position_component_correlation(&a, 0, &p, 2, 3).unwrap();
        assert!(corr[0] > 0.99 && corr[1] > 0.99, "{corr:?}");
        assert!(corr[2] < 0.5, "{corr:?}");
        assert!(position_component_correlation(&a, 6, &p, 2, 3).is_err());
        assert!(position_component_correlation(&a, 0, &p, 0, 3).is_err());
    }

    #[test]
    fn ppm_header_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let a = planted_2d(1, 4, 5, 0.1, 0).unwrap();
        let map = image_pca_map(&a, 0, 3).unwrap();
        assert!(map.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let path = dir.path().join("m.ppm");
        map.write_ppm(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n4 4\n255\n"));
        assert_eq!(bytes.len(), 11 + 48);
        assert_eq!(map.to_csv().lines().count(), 17);
    }
}
