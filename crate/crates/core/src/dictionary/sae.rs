//! Sparse autoencoder whose dictionary is constrained to the convex hull of
//! data centroids: `D = S·C` with `S` row-stochastic (row softmax of free
//! logits) and `C` a frozen matrix of k-means centroids.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::adam::{Adam, TrainConfig};
use super::kmeans::kmeans;
use super::topk::{batch_topk, row_topk};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::tensor_io::{flatten_tokens, read_axt, write_axt, ActivationSet, AxtTensor, SparseRows};

/// How pre-codes are sparsified after rectification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sparsity {
    /// Keep the `b·k` largest entries of a `b`-row batch.
    BatchTopK,
    /// Keep the `k` largest entries of every row.
    TopK,
}

/// Architecture of an archetypal SAE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaeShape {
    /// Number of concepts.
    pub c: usize,
    /// Active codes per token (average, for BatchTopK).
    pub k: usize,
    /// Number of k-means centroids spanning the archetype hull.
    pub m: usize,
    pub sparsity: Sparsity,
    pub kmeans_iters: usize,
    /// Initial pre-code of concept `i` is `1 + α(⟨x, d_i⟩ − ‖d_i‖²)/‖d_i‖²`:
    /// 1 on its own atom, and for `α > 1` negative on inputs that overlap the
    /// atom by less than `1 − 1/α`. `α = 1` is the plain matched filter.
    #[serde(default = "default_sharpness")]
    pub init_sharpness: f64,
}

fn default_sharpness() -> f64 {
    3.0
}

impl SaeShape {
    pub fn new(c: usize, k: usize, m: usize) -> Self {
        Self {
            c,
            k,
            m,
            sparsity: Sparsity::BatchTopK,
            kmeans_iters: 100,
            init_sharpness: default_sharpness(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchetypalSae {
    encoder_weights: DMatrix<f64>,
    encoder_bias: DVector<f64>,
    logits_s: DMatrix<f64>,
    centroids: DMatrix<f64>,
    k: usize,
    sparsity: Sparsity,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointConfig {
    c: usize,
    d: usize,
    m: usize,
    k: usize,
    sparsity: Sparsity,
}

fn row_softmax(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = logits.clone();
    for mut row in s.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    s
}

impl ArchetypalSae {
    pub fn new(
        encoder_weights: DMatrix<f64>,
        encoder_bias: DVector<f64>,
        logits_s: DMatrix<f64>,
        centroids: DMatrix<f64>,
        k: usize,
        sparsity: Sparsity,
    ) -> Result<Self> {
        let (c, d) = encoder_weights.shape();
        if encoder_bias.len() != c || logits_s.nrows() != c {
            return Err(Error::shape("encoder bias and logits must have one entry/row per concept"));
        }
        if logits_s.ncols() != centroids.nrows() || centroids.ncols() != d {
            return Err(Error::shape(format!(
                "logits {:?} and centroids {:?} incompatible with encoder {c}×{d}",
                logits_s.shape(),
                centroids.shape()
            )));
        }
        if k == 0 || k > c {
            return Err(Error::arg(format!("k must lie in 1..={c}, got {k}")));
        }
        Ok(Self {
            encoder_weights,
            encoder_bias,
            logits_s,
            centroids,
            k,
            sparsity,
        })
    }

    pub fn n_concepts(&self) -> usize {
        self.encoder_weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.encoder_weights.ncols()
    }

    pub fn n_centroids(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sparsity(&self) -> Sparsity {
        self.sparsity
    }

    pub fn encoder_weights(&self) -> &DMatrix<f64> {
        &self.encoder_weights
    }

    pub fn encoder_bias(&self) -> &DVector<f64> {
        &self.encoder_bias
    }

    pub fn logits(&self) -> &DMatrix<f64> {
        &self.logits_s
    }

    pub fn centroids(&self) -> &DMatrix<f64> {
        &self.centroids
    }

    /// Row-stochastic mixing matrix `S`, `c × m`.
    pub fn mixing(&self) -> DMatrix<f64> {
        row_softmax(&self.logits_s)
    }

    /// Dictionary `D = S·C`, `c × d`.
    pub fn dictionary(&self) -> DMatrix<f64> {
        self.mixing() * &self.centroids
    }

    fn pre_codes(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut pre = a * self.encoder_weights.transpose();
        for mut row in pre.row_iter_mut() {
            row += self.encoder_bias.transpose();
        }
        pre
    }

    fn sparsify(&self, pre: &DMatrix<f64>) -> DMatrix<f64> {
        let rect = pre.map(|v| v.max(0.0));
        match self.sparsity {
            Sparsity::BatchTopK => {
                let budget = (rect.nrows() * self.k).min(rect.len());
                batch_topk(&rect, budget).expect("budget clamped to batch size")
            }
            Sparsity::TopK => row_topk(&rect, self.k),
        }
    }

    /// Encode `a` block by block, `batch` rows at a time.
    pub fn encode_batched(&self, a: &DMatrix<f64>, batch: usize) -> Result<SparseRows> {
        let batch = batch.max(1);
        let mut out = SparseRows::new(self.n_concepts());
        let mut start = 0;
        let mut buf = Vec::new();
        while start < a.nrows() {
            let end = (start + batch).min(a.nrows());
            let z = self.sparsify(&self.pre_codes(&a.rows(start, end - start).into_owned()));
            for i in 0..z.nrows() {
                buf.clear();
                buf.extend((0..z.ncols()).filter(|&j| z[(i, j)] > 0.0).map(|j| (j, z[(i, j)])));
                out.push_row(&buf)?;
            }
            start = end;
        }
        Ok(out)
    }

    /// Encode then decode in blocks of `batch` rows.
    pub fn reconstruct(&self, a: &DMatrix<f64>, batch: usize) -> Result<DMatrix<f64>> {
        let z = self.encode_batched(a, batch)?;
        decode(self, &z)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_axt(&AxtTensor::from_matrix(&self.encoder_weights).with_name("encoder_weights")?, dir.join("encoder_weights.axt"))?;
        write_axt(&AxtTensor::from_vector(&self.encoder_bias).with_name("encoder_bias")?, dir.join("encoder_bias.axt"))?;
        write_axt(&AxtTensor::from_matrix(&self.logits_s).with_name("logits_S")?, dir.join("logits_S.axt"))?;
        write_axt(&AxtTensor::from_matrix(&self.centroids).with_name("centroids_C")?, dir.join("centroids_C.axt"))?;
        let cfg = CheckpointConfig {
            c: self.n_concepts(),
            d: self.dim(),
            m: self.n_centroids(),
            k: self.k,
            sparsity: self.sparsity,
        };
        let path = dir.join("config.json");
        fs::write(&path, serde_json::to_string_pretty(&cfg)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("config.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let cfg: CheckpointConfig = serde_json::from_str(&text)?;
        let sae = Self::new(
            read_axt(dir.join("encoder_weights.axt"))?.to_matrix()?,
            read_axt(dir.join("encoder_bias.axt"))?.to_vector()?,
            read_axt(dir.join("logits_S.axt"))?.to_matrix()?,
            read_axt(dir.join("centroids_C.axt"))?.to_matrix()?,
            cfg.k,
            cfg.sparsity,
        )?;
        if sae.n_concepts() != cfg.c || sae.dim() != cfg.d || sae.n_centroids() != cfg.m {
            return Err(Error::shape("checkpoint tensors disagree with config.json"));
        }
        Ok(sae)
    }
}

/// Rectify the affine pre-codes and sparsify them over the whole block.
pub fn encode(sae: &ArchetypalSae, a: &DMatrix<f64>) -> Result<SparseRows> {
    if a.nrows() == 0 {
        return Err(Error::arg("encode needs at least one row"));
    }
    if a.ncols() != sae.dim() {
        return Err(Error::shape(format!("input has {} columns, model expects {}", a.ncols(), sae.dim())));
    }
    sae.encode_batched(a, a.nrows())
}

/// `z · D`, touching only the stored code entries.
pub fn decode(sae: &ArchetypalSae, z: &SparseRows) -> Result<DMatrix<f64>> {
    if z.n_cols() != sae.n_concepts() {
        return Err(Error::shape(format!(
            "codes have {} columns, model has {} concepts",
            z.n_cols(),
            sae.n_concepts()
        )));
    }
    let dict = sae.dictionary();
    let mut out = DMatrix::zeros(z.n_rows(), sae.dim());
    for (i, (idx, val)) in z.rows().enumerate() {
        for (&j, &v) in idx.iter().zip(val) {
            for col in 0..dict.ncols() {
                out[(i, col)] += v * dict[(j, col)];
            }
        }
    }
    Ok(out)
}

/// `1 − ‖a − â‖²_F / ‖a − mean(a)‖²_F`, the mean taken per column over rows.
pub fn r_squared(a: &DMatrix<f64>, a_hat: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != a_hat.shape() {
        return Err(Error::shape(format!("{:?} vs {:?}", a.shape(), a_hat.shape())));
    }
    let sst = linalg::center_rows(a).norm_squared();
    if sst == 0.0 {
        return Err(Error::numeric("R² undefined for zero-variance data"));
    }
    Ok(1.0 - (a - a_hat).norm_squared() / sst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean over batches of the per-entry squared reconstruction error.
    pub mse: f64,
    /// R² of the whole training set at the end of the epoch.
    pub r2: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedSae {
    pub sae: ArchetypalSae,
    pub trace: Vec<EpochStats>,
    pub kmeans_inertia: f64,
}

/// Train on the flattened tokens of an activation set.
pub fn train_sae(data: &ActivationSet, shape: SaeShape, cfg: &TrainConfig) -> Result<TrainedSae> {
    train_sae_on_rows(&flatten_tokens(data), shape, cfg)
}

fn initial_model(a: &DMatrix<f64>, shape: SaeShape, cfg: &TrainConfig) -> Result<(ArchetypalSae, f64)> {
    let d = a.ncols();
    let km = kmeans(a, shape.m, shape.kmeans_iters, rng::derive_seed(cfg.seed, "kmeans"))?;
    let mut rng = rng::stream(cfg.seed, "sae-init");
    // each concept starts concentrated on a "home" centroid
    let mut homes: Vec<usize> = (0..shape.m).collect();
    homes.shuffle(&mut rng);
    let boost = (shape.m as f64).ln() + 2.0;
    let logits = DMatrix::from_fn(shape.c, shape.m, |i, j| {
        let noise: f64 = StandardNormal.sample(&mut rng);
        0.01 * noise + if homes[i % shape.m] == j { boost } else { 0.0 }
    });
    let dict = row_softmax(&logits) * &km.centroids;
    let alpha = shape.init_sharpness;
    let mut enc = DMatrix::zeros(shape.c, d);
    let mut bias = DVector::zeros(shape.c);
    for i in 0..shape.c {
        let row = dict.row(i);
        let n2 = row.norm_squared().max(1e-12);
        enc.set_row(i, &(row * (alpha / n2)));
        bias[i] = 1.0 - alpha;
    }
    let sae = ArchetypalSae::new(enc, bias, logits, km.centroids, shape.k, shape.sparsity)?;
    Ok((sae, km.inertia))
}

/// Train on an explicit `rows × d` matrix of tokens.
pub fn train_sae_on_rows(a: &DMatrix<f64>, shape: SaeShape, cfg: &TrainConfig) -> Result<TrainedSae> {
    cfg.validate()?;
    let (n, d) = a.shape();
    if shape.c <= d {
        return Err(Error::arg(format!("dictionary must be overcomplete: c = {} ≤ d = {d}", shape.c)));
    }
    if shape.k == 0 || shape.k >= shape.c {
        return Err(Error::arg(format!("need 1 ≤ k < c, got k = {}", shape.k)));
    }
    if shape.m == 0 || shape.m > n {
        return Err(Error::arg(format!("need 1 ≤ m ≤ {n} centroids, got {}", shape.m)));
    }
    if !(shape.init_sharpness > 0.0 && shape.init_sharpness.is_finite()) {
        return Err(Error::arg("init_sharpness must be positive"));
    }

    let (mut sae, inertia) = initial_model(a, shape, cfg)?;
    let mut opt_w = Adam::new(sae.encoder_weights.len());
    let mut opt_b = Adam::new(sae.encoder_bias.len());
    let mut opt_l = Adam::new(sae.logits_s.len());
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = rng::stream(cfg.seed, "shuffle");
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xb = DMatrix::from_fn(chunk.len(), d, |i, j| a[(chunk[i], j)]);
            let loss = sgd_step(&mut sae, &xb, cfg, &mut opt_w, &mut opt_b, &mut opt_l);
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "loss became {loss} at epoch {epoch}, batch {bi}; the learning rate ({}) is likely too high",
                    cfg.learning_rate
                )));
            }
            loss_sum += loss;
            batches += 1;
        }
        let r2 = r_squared(a, &sae.reconstruct(a, cfg.batch_size)?)?;
        trace.push(EpochStats {
            epoch,
            mse: loss_sum / batches as f64,
            r2,
        });
    }

    Ok(TrainedSae {
        sae,
        trace,
        kmeans_inertia: inertia,
    })
}

// One Adam step on a batch; returns the batch loss before the update.
fn sgd_step(
    sae: &mut ArchetypalSae,
    xb: &DMatrix<f64>,
    cfg: &TrainConfig,
    opt_w: &mut Adam,
    opt_b: &mut Adam,
    opt_l: &mut Adam,
) -> f64 {
    let (b, d) = xb.shape();
    let s = sae.mixing();
    let dict = &s * &sae.centroids;
    let z = sae.sparsify(&sae.pre_codes(xb));
    let resid = &z * &dict - xb;
    let scale = 1.0 / (b * d) as f64;
    let loss = resid.norm_squared() * scale;

    let g = resid * (2.0 * scale);
    // gradient reaches only the surviving (positive) codes
    let mut dz = &g * dict.transpose();
    dz.zip_apply(&z, |gz, zv| {
        if zv <= 0.0 {
            *gz = 0.0
        }
    });
    let dw = dz.transpose() * xb;
    let db = dz.row_sum().transpose();
    let dd = z.transpose() * &g;
    let ds = dd * sae.centroids.transpose();
    let mut dl = DMatrix::zeros(s.nrows(), s.ncols());
    for i in 0..s.nrows() {
        let inner: f64 = s.row(i).dot(&ds.row(i));
        for j in 0..s.ncols() {
            dl[(i, j)] = s[(i, j)] * (ds[(i, j)] - inner);
        }
    }

    opt_w.step(sae.encoder_weights.as_mut_slice(), dw.as_slice(), cfg);
    opt_b.step(sae.encoder_bias.as_mut_slice(), db.as_slice(), cfg);
    opt_l.step(sae.logits_s.as_mut_slice(), dl.as_slice(), cfg);
    loss
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model(w: DMatrix<f64>, bias: DVector<f64>, k: usize) -> ArchetypalSae {
        let (c, d) = w.shape();
        // identity-like logits over c centroids equal to the unit basis
        let logits = DMatrix::from_fn(c, c, |i, j| if i == j { 50.0 } else { 0.0 });
        let centroids = DMatrix::from_fn(c, d, |i, j| if i % d == j { 1.0 } else { 0.0 });
        ArchetypalSae::new(w, bias, logits, centroids, k, Sparsity::BatchTopK).unwrap()
    }

    #[test]
    fn encode_keeps_largest_positive() {
        // pre-codes (0.5, 2.0, -1.0) for input x = (1)
        let w = DMatrix::from_column_slice(3, 1, &[0.5, 2.0, -1.0]);
        let sae = tiny_model(w, DVector::zeros(3), 1);
        let z = encode(&sae, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(z.row(0), (&[1usize][..], &[2.0][..]));
    }

    #[test]
    fn encode_all_nonpositive_is_empty() {
        let w = DMatrix::from_column_slice(3, 1, &[-0.5, -2.0, 0.0]);
        let sae = tiny_model(w, DVector::zeros(3), 1);
        let z = encode(&sae, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(z.nnz(), 0);
    }

    #[test]
    fn encode_batch_budget() {
        // inputs e0, e1 with encoder = identity give pre-codes [[3,1],[2,5]] after scaling
        let w = DMatrix::identity(2, 2);
        let sae = tiny_model(w, DVector::zeros(2), 1);
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 2.0, 5.0]);
        let z = encode(&sae, &a).unwrap().to_dense();
        assert_eq!(z, DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 5.0]));
    }

    #[test]
    fn decode_unit_code_returns_atom() {
        let sae = tiny_model(DMatrix::identity(3, 2), DVector::zeros(3), 1);
        let dict = sae.dictionary();
        let mut z = SparseRows::new(3);
        z.push_row(&[(2, 1.0)]).unwrap();
        let x = decode(&sae, &z).unwrap();
        assert_eq!(x.row(0), dict.row(2));
        assert_eq!(decode(&sae, &SparseRows::zeros(2, 3)).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn mixing_rows_are_stochastic() {
        let sae = tiny_model(DMatrix::identity(3, 2), DVector::zeros(3), 1);
        for row in sae.mixing().row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn r2_reference_values() {
        let a = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        assert_eq!(r_squared(&a, &a).unwrap(), 1.0);
        let mean = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert_eq!(r_squared(&a, &mean).unwrap(), 0.0);
        let half = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!((r_squared(&a, &half).unwrap() - 0.5).abs() < 1e-15);
        assert!(r_squared(&mean, &a).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let sae = tiny_model(DMatrix::identity(3, 2), DVector::from_vec(vec![0.1, 0.2, 0.3]), 2);
        let dir = tempfile::tempdir().unwrap();
        sae.save(dir.path()).unwrap();
        assert_eq!(ArchetypalSae::load(dir.path()).unwrap(), sae);
    }

    #[test]
    fn rejects_undercomplete() {
        let a = DMatrix::from_fn(10, 4, |i, j| (i * 4 + j) as f64);
        let err = train_sae_on_rows(&a, SaeShape::new(4, 1, 4), &TrainConfig::default());
        assert!(err.is_err());
    }
}
