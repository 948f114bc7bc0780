//! Classical archetypal analysis: `X ≈ A·B·X` with row-stochastic `A` (n×p)
//! and `B` (p×n).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::ArchetypalSae;
use crate::error::{Error, Result};
use crate::mrh::{hull_membership, Polytope};
use crate::rng;
use crate::tensor_io::{flatten_tokens, read_axt, write_axt, ActivationSet, AxtTensor};

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    if n == 0 {
        return Vec::new();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AaModel {
    pub mix_b: DMatrix<f64>,
    pub loads_a: DMatrix<f64>,
    archetypes: DMatrix<f64>,
}

impl AaModel {
    /// Validates the simplex constraints and caches `B·X`.
    pub fn new(mix_b: DMatrix<f64>, loads_a: DMatrix<f64>, x: &DMatrix<f64>) -> Result<Self> {
        if mix_b.ncols() != x.nrows() || loads_a.nrows() != x.nrows() || loads_a.ncols() != mix_b.nrows() {
            return Err(Error::shape("AA factors do not match the data"));
        }
        for (name, m) in [("B", &mix_b), ("A", &loads_a)] {
            for (i, row) in m.row_iter().enumerate() {
                let s: f64 = row.sum();
                if row.iter().any(|&x| x < 0.0) || (s - 1.0).abs() > 1e-9 {
                    return Err(Error::numeric(format!("row {i} of {name} is off the simplex (sum {s})")));
                }
            }
        }
        let archetypes = &mix_b * x;
        Ok(Self {
            mix_b,
            loads_a,
            archetypes,
        })
    }

    pub fn n_archetypes(&self) -> usize {
        self.mix_b.nrows()
    }

    /// `B·X`, p×d.
    pub fn archetypes(&self) -> &DMatrix<f64> {
        &self.archetypes
    }

    pub fn reconstruction(&self) -> DMatrix<f64> {
        &self.loads_a * &self.archetypes
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_axt(&AxtTensor::from_matrix(&self.mix_b).with_name("mix_B")?, dir.join("mix_B.axt"))?;
        write_axt(&AxtTensor::from_matrix(&self.loads_a).with_name("loads_A")?, dir.join("loads_A.axt"))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>, x: &DMatrix<f64>) -> Result<Self> {
        let dir = dir.as_ref();
        let b = read_axt(dir.join("mix_B.axt"))?.to_matrix()?;
        let a = read_axt(dir.join("loads_A.axt"))?.to_matrix()?;
        Self::new(b, a, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AaConfig {
    pub iters: usize,
    pub tol: f64,
    pub inner_tol: f64,
    pub seed: u64,
}

impl Default for AaConfig {
    fn default() -> Self {
        Self {
            iters: 200,
            tol: 1e-7,
            inner_tol: 1e-10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AaFit {
    pub model: AaModel,
    /// Relative error `‖X − ABX‖_F / ‖X‖_F` after initialisation and after each outer iteration.
    pub trace: Vec<f64>,
}

impl AaFit {
    pub fn relative_error(&self) -> f64 {
        *self.trace.last().expect("trace starts with the initial error")
    }
}

/// Furthest-sum selection of `p` distinct rows, starting from a seeded random row
/// and then repeatedly taking the row with the largest summed distance to the chosen set.
pub fn furthest_sum(x: &DMatrix<f64>, p: usize, seed: u64) -> Result<Vec<usize>> {
    let n = x.nrows();
    if p == 0 || p > n {
        return Err(Error::arg(format!("need 1 ≤ p ≤ n, got p = {p}, n = {n}")));
    }
    let mut rng = rng::stream(seed, "furthest-sum");
    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    let mut score = vec![0.0; n];
    let mut taken = vec![false; n];
    taken[first] = true;
    while chosen.len() < p {
        let last = x.row(*chosen.last().unwrap());
        score.par_iter_mut().enumerate().for_each(|(i, s)| *s += (x.row(i) - last).norm());
        let next = (0..n)
            .filter(|&i| !taken[i])
            .max_by(|&a, &b| score[a].total_cmp(&score[b]).then(b.cmp(&a)))
            .expect("p ≤ n");
        taken[next] = true;
        chosen.push(next);
    }
    Ok(chosen)
}

fn relative_error(x: &DMatrix<f64>, a: &DMatrix<f64>, z: &DMatrix<f64>, x_norm: f64) -> f64 {
    (x - a * z).norm() / x_norm
}

/// Each row of `A` is the barycentric code of the nearest point of
/// `conv(rows of z)`, solved with the exact corral method; a row is only
/// replaced when its residual improves.
fn update_a(x: &DMatrix<f64>, z: &DMatrix<f64>, a: &mut DMatrix<f64>, tol: f64) -> Result<()> {
    let poly = Polytope::new(z.clone())?;
    let scale = z.amax().max(x.amax()).max(f64::MIN_POSITIVE);
    let rows: Vec<Option<DVector<f64>>> = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i).transpose();
            let m = hull_membership(&xi, &poly, tol * scale, 10_000)?;
            let old = (&xi - z.tr_mul(&a.row(i).transpose())).norm();
            Ok((m.distance < old).then_some(m.alpha))
        })
        .collect::<Result<_>>()?;
    for (i, r) in rows.into_iter().enumerate() {
        if let Some(r) = r {
            a.row_mut(i).copy_from(&r.transpose());
        }
    }
    Ok(())
}

/// Cyclic exact updates of the archetypes. With the other rows fixed,
/// `‖X − A·B·X‖²_F` as a function of archetype `r` is `‖a_r‖²·‖z_r − t_r‖²` plus
/// a constant, so the best `z_r ∈ conv(X)` is the projection of `t_r` onto the
/// data hull; row `r` of `B` is its barycentric code.
fn update_b(x: &DMatrix<f64>, data_hull: &Polytope, a: &DMatrix<f64>, b: &mut DMatrix<f64>, z: &mut DMatrix<f64>, tol: f64) -> Result<()> {
    let scale = x.amax().max(f64::MIN_POSITIVE);
    let ata = a.transpose() * a;
    let xta = x.transpose() * a; // d×p
    for r in 0..b.nrows() {
        let w = ata[(r, r)];
        if w <= 0.0 {
            continue;
        }
        let zr = z.row(r).transpose();
        let t = (xta.column(r) - z.tr_mul(&ata.column(r))) / w + &zr;
        let m = hull_membership(&t, data_hull, tol * scale, 100_000)?;
        let new_z = data_hull.combine(&m.alpha);
        if (&new_z - &t).norm() < (&zr - &t).norm() {
            b.row_mut(r).copy_from(&m.alpha.transpose());
            z.row_mut(r).copy_from(&new_z.transpose());
        }
    }
    Ok(())
}

fn run_alternation(x: &DMatrix<f64>, mut b: DMatrix<f64>, mut a: DMatrix<f64>, cfg: &AaConfig) -> Result<AaFit> {
    let x_norm = x.norm();
    if x_norm == 0.0 {
        return Err(Error::numeric("data matrix is identically zero"));
    }
    let data_hull = Polytope::new(x.clone())?;
    let mut z = &b * x;
    update_a(x, &z, &mut a, cfg.inner_tol)?;
    let mut trace = vec![relative_error(x, &a, &z, x_norm)];
    for _ in 0..cfg.iters {
        update_b(x, &data_hull, &a, &mut b, &mut z, cfg.inner_tol)?;
        update_a(x, &z, &mut a, cfg.inner_tol)?;
        let err = relative_error(x, &a, &z, x_norm);
        if !err.is_finite() {
            return Err(Error::numeric("archetypal analysis diverged"));
        }
        let prev = *trace.last().unwrap();
        // both block updates keep their best iterate, so this only guards rounding
        trace.push(err.min(prev));
        if prev - err < cfg.tol * prev.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let model = AaModel::new(b, a, x)?;
    Ok(AaFit { model, trace })
}

fn uniform_rows(n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_element(n, p, 1.0 / p as f64)
}

/// Fits `p` archetypes by alternating simplex-constrained least squares,
/// initialised with furthest-sum.
pub fn fit_aa(x: &DMatrix<f64>, p: usize, cfg: &AaConfig) -> Result<AaFit> {
    let n = x.nrows();
    if p == 0 || p > n {
        return Err(Error::arg(format!("need 1 ≤ p ≤ n, got p = {p}, n = {n}")));
    }
    let picks = furthest_sum(x, p, cfg.seed)?;
    let mut b = DMatrix::zeros(p, n);
    for (r, &i) in picks.iter().enumerate() {
        b[(r, i)] = 1.0;
    }
    run_alternation(x, b, uniform_rows(n, p), cfg)
}

/// Grows a fit from `prev.n_archetypes()` to `p` archetypes: the old archetypes
/// are kept and the new ones are the furthest rows from them, with zero load.
/// The starting error therefore equals the previous one.
pub fn extend_aa(x: &DMatrix<f64>, prev: &AaModel, p: usize, cfg: &AaConfig) -> Result<AaFit> {
    let n = x.nrows();
    let p0 = prev.n_archetypes();
    if p < p0 || p > n {
        return Err(Error::arg(format!("cannot grow {p0} archetypes to {p} on {n} rows")));
    }
    let mut b = DMatrix::zeros(p, n);
    b.rows_mut(0, p0).copy_from(&prev.mix_b);
    let mut a = DMatrix::zeros(n, p);
    a.columns_mut(0, p0).copy_from(&prev.loads_a);
    let mut score: Vec<f64> = (0..n)
        .map(|i| (0..p0).map(|r| (x.row(i) - prev.archetypes.row(r)).norm()).sum())
        .collect();
    for r in p0..p {
        let next = (0..n).max_by(|&i, &j| score[i].total_cmp(&score[j]).then(j.cmp(&i))).expect("n ≥ 1");
        b[(r, next)] = 1.0;
        score[next] = f64::NEG_INFINITY;
        for (i, s) in score.iter_mut().enumerate() {
            if s.is_finite() {
                *s += (x.row(i) - x.row(next)).norm();
            }
        }
    }
    run_alternation(x, b, a, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveProtocol {
    /// Separate fit on each image's patch tokens; errors are averaged over images.
    PerImage,
    /// One fit on all tokens.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub p: usize,
    pub aa_error: f64,
    pub sae_error: Option<f64>,
}

fn sae_error(sae: &ArchetypalSae, x: &DMatrix<f64>) -> Result<f64> {
    let recon = sae.reconstruct(x, 4096)?;
    Ok((x - recon).norm() / x.norm())
}

fn curve_on_rows(x: &DMatrix<f64>, p_values: &[usize], cfg: &AaConfig) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(p_values.len());
    let mut prev: Option<AaModel> = None;
    for &p in p_values {
        let fit = match &prev {
            Some(m) => extend_aa(x, m, p, cfg)?,
            None => fit_aa(x, p, cfg)?,
        };
        out.push(fit.relative_error());
        prev = Some(fit.model);
    }
    Ok(out)
}

/// Relative AA error for each `p` (ascending, fits warm-started from the
/// previous `p`) next to the fixed SAE's relative error on the same rows.
pub fn aa_vs_sae_curve(
    set: &ActivationSet,
    p_values: &[usize],
    sae: Option<&ArchetypalSae>,
    protocol: CurveProtocol,
    cfg: &AaConfig,
) -> Result<Vec<CurveRow>> {
    if p_values.is_empty() || p_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg("p values must be nonempty and strictly increasing"));
    }
    if let Some(s) = sae {
        if s.dim() != set.dim() {
            return Err(Error::shape(format!("SAE dimension {} vs data dimension {}", s.dim(), set.dim())));
        }
    }
    let blocks: Vec<DMatrix<f64>> = match protocol {
        CurveProtocol::Pooled => vec![flatten_tokens(set)],
        CurveProtocol::PerImage => (0..set.n_images()).map(|i| set.image_patches(i)).collect(),
    };
    let mut aa = vec![0.0; p_values.len()];
    let mut se = 0.0;
    for x in &blocks {
        for (acc, e) in aa.iter_mut().zip(curve_on_rows(x, p_values, cfg)?) {
            *acc += e;
        }
        if let Some(s) = sae {
            se += sae_error(s, x)?;
        }
    }
    let k = blocks.len() as f64;
    Ok(p_values
        .iter()
        .zip(aa)
        .map(|(&p, e)| CurveRow {
            p,
            aa_error: e / k,
            sae_error: sae.map(|_| se / k),
        })
        .collect())
}
