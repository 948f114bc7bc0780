//! Softmax attention as a map into a polytope, and the identities it obeys.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::minkowski::{dirichlet, MinkowskiModel, Tile};
use super::polytope::{hull_membership, support_function, Polytope};
use crate::error::{Error, Result};
use crate::rng;

/// A single attention head over a fixed set of `m` keys and values.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    /// `m × d_k`.
    pub keys: DMatrix<f64>,
    /// `m × d_v`.
    pub values: DMatrix<f64>,
    pub temperature: f64,
}

impl AttentionHead {
    pub fn new(keys: DMatrix<f64>, values: DMatrix<f64>, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::arg(format!("temperature must be positive, got {temperature}")));
        }
        if keys.nrows() == 0 || keys.nrows() != values.nrows() {
            return Err(Error::shape("need m ≥ 1 keys and exactly one value per key"));
        }
        Ok(Self {
            keys,
            values,
            temperature,
        })
    }

    /// Standard normal keys and values.
    pub fn random(m: usize, d_k: usize, d_v: usize, temperature: f64, rng: &mut rng::Rng) -> Result<Self> {
        let keys = DMatrix::from_fn(m, d_k, |_, _| StandardNormal.sample(rng));
        let values = DMatrix::from_fn(m, d_v, |_, _| StandardNormal.sample(rng));
        Self::new(keys, values, temperature)
    }

    pub fn n_keys(&self) -> usize {
        self.keys.nrows()
    }

    pub fn value_polytope(&self) -> Polytope {
        Polytope::new(self.values.clone()).expect("validated head")
    }

    pub fn logits(&self, query: &DVector<f64>) -> Result<DVector<f64>> {
        if query.len() != self.keys.ncols() {
            return Err(Error::shape(format!("query has length {}, keys have width {}", query.len(), self.keys.ncols())));
        }
        Ok(&self.keys * query)
    }
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &DVector<f64>, temperature: f64) -> DVector<f64> {
    let max = logits.max();
    let mut w = logits.map(|x| ((x - max) / temperature).exp());
    let total = w.sum();
    w /= total;
    w
}

#[derive(Debug, Clone)]
pub struct HeadOutput {
    pub weights: DVector<f64>,
    pub output: DVector<f64>,
}

/// `α = softmax(K·q / τ)`, `y = αᵀV`.
pub fn head_output(head: &AttentionHead, query: &DVector<f64>) -> Result<HeadOutput> {
    let weights = softmax(&head.logits(query)?, head.temperature);
    let output = head.values.tr_mul(&weights);
    Ok(HeadOutput { weights, output })
}

#[derive(Debug, Clone)]
pub struct MultiHeadOutput {
    pub output: DVector<f64>,
    pub weights: Vec<DVector<f64>>,
}

/// `y = Σ_h W_O^{(h)} y_h` for a shared query.
pub fn multi_head_sample(heads: &[(AttentionHead, DMatrix<f64>)], query: &DVector<f64>) -> Result<MultiHeadOutput> {
    let first = heads.first().ok_or_else(|| Error::arg("need at least one head"))?;
    let d = first.1.nrows();
    let mut output = DVector::zeros(d);
    let mut weights = Vec::with_capacity(heads.len());
    for (h, (head, w_o)) in heads.iter().enumerate() {
        if w_o.nrows() != d || w_o.ncols() != head.values.ncols() {
            return Err(Error::shape(format!("head {h}: output map {:?} incompatible", w_o.shape())));
        }
        let out = head_output(head, query)?;
        output += w_o * &out.output;
        weights.push(out.weights);
    }
    Ok(MultiHeadOutput { output, weights })
}

/// Tiles `W_O^{(h)} V_h`, all active.
pub fn multi_head_model(heads: &[(AttentionHead, DMatrix<f64>)]) -> Result<MinkowskiModel> {
    let tiles = heads
        .iter()
        .map(|(h, w)| Tile::with_map(h.values.clone(), w.clone()))
        .collect::<Vec<_>>();
    let n = tiles.len();
    MinkowskiModel::new(tiles, n)
}

/// Both sides of the affine transport identity
/// `W(zᵀA) + b = zᵀ(A Wᵀ + 1 bᵀ)` for `z` on the simplex.
pub fn affine_transport(
    archetypes: &DMatrix<f64>,
    codes: &DVector<f64>,
    map: &DMatrix<f64>,
    bias: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if codes.len() != archetypes.nrows() || map.ncols() != archetypes.ncols() || bias.len() != map.nrows() {
        return Err(Error::shape("incompatible archetypes / codes / map / bias"));
    }
    let lhs = map * archetypes.tr_mul(codes) + bias;
    let mut moved = archetypes * map.transpose();
    for mut row in moved.row_iter_mut() {
        row += bias.transpose();
    }
    let rhs = moved.tr_mul(codes);
    Ok((lhs, rhs))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowTempBound {
    pub deviation: f64,
    pub bound: f64,
    pub winner: usize,
}

impl LowTempBound {
    /// `deviation ≤ bound`, allowing for a few ulps of rounding.
    pub fn holds(&self) -> bool {
        self.deviation <= self.bound * (1.0 + 16.0 * f64::EPSILON) + f64::MIN_POSITIVE
    }
}

/// Distance of the head output from the winning value vector, and the bound
/// `diam(V) Σ_{j≠j*} exp(−Δ_j/τ)` with `Δ_j` the logit margin of `j`.
pub fn low_temp_bound(head: &AttentionHead, query: &DVector<f64>) -> Result<LowTempBound> {
    let logits = head.logits(query)?;
    let winner = logits.argmax().0;
    let top = logits[winner];
    if logits.iter().enumerate().any(|(j, &x)| j != winner && x == top) {
        return Err(Error::arg("tied maximal logits: the vertex bound is vacuous"));
    }
    let decay: Vec<f64> = logits.iter().map(|&x| (-(top - x) / head.temperature).exp()).collect();
    let tail: f64 = decay.iter().enumerate().filter(|(j, _)| *j != winner).map(|(_, e)| e).sum();
    let bound = head.value_polytope().diameter() * tail;
    // y − v* = Σ_{j≠j*} α_j (v_j − v*), evaluated without cancellation; the
    // largest tail weight is factored out so squaring in the norm cannot underflow
    let total = 1.0 + tail;
    let scale = decay.iter().enumerate().filter(|(j, _)| *j != winner).map(|(_, &e)| e).fold(0.0, f64::max);
    let v_star = head.values.row(winner);
    let mut diff = DVector::zeros(head.values.ncols());
    if scale > 0.0 {
        for (j, e) in decay.iter().enumerate() {
            if j != winner {
                diff += (head.values.row(j) - v_star).transpose() * (e / scale);
            }
        }
    }
    Ok(LowTempBound {
        deviation: diff.norm() * (scale / total),
        bound,
        winner,
    })
}

/// Vertices attaining `max_j ⟨w, v_j⟩` up to `rel_tol` of the value scale.
pub fn exposed_face(poly: &Polytope, w: &DVector<f64>, rel_tol: f64) -> Result<Vec<usize>> {
    let h = support_function(poly, w)?;
    let scores = poly.vertices() * w;
    let scale = scores.amax().max(1.0);
    Ok((0..poly.n_vertices()).filter(|&j| h - scores[j] <= rel_tol * scale).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportRestrictionReport {
    pub samples: usize,
    /// Largest distance of a restricted sample to `conv(V_S)`.
    pub max_subpolytope_distance: f64,
    pub directions: usize,
    /// Largest shortfall `h(w) − ⟨w, y⟩` of face samples.
    pub max_face_gap: f64,
    pub passed: bool,
}

/// Sample outputs whose attention is supported on `subset` and check they lie
/// in the sub-polytope; then, for random directions `w`, check that outputs
/// supported on the maximisers of `⟨w, v_j⟩` attain the support value.
pub fn support_restriction_check(poly: &Polytope, subset: &[usize], samples: usize, n_dirs: usize, seed: u64) -> Result<SupportRestrictionReport> {
    let sub = poly.restrict(subset)?;
    let mut rng = rng::stream(seed, "support-restriction");
    let mut max_dist: f64 = 0.0;
    for _ in 0..samples {
        let w = dirichlet(subset.len(), 1.0, &mut rng);
        let mut alpha = DVector::zeros(poly.n_vertices());
        for (&j, &a) in subset.iter().zip(w.iter()) {
            alpha[j] += a;
        }
        let y = poly.combine(&alpha);
        max_dist = max_dist.max(hull_membership(&y, &sub, 1e-8, 10_000)?.distance);
    }
    let mut dirs = Vec::with_capacity(n_dirs);
    for _ in 0..n_dirs {
        dirs.push(DVector::from_fn(poly.dim(), |_, _| StandardNormal.sample(&mut rng)));
    }
    let mut face_gap: f64 = 0.0;
    for w in &dirs {
        face_gap = face_gap.max(face_gap_along(poly, w, samples.max(1), &mut rng)?);
    }
    Ok(SupportRestrictionReport {
        samples,
        max_subpolytope_distance: max_dist,
        directions: n_dirs,
        max_face_gap: face_gap,
        passed: max_dist <= 1e-8 && face_gap <= 1e-9,
    })
}

/// Largest support-value shortfall of random points on the face exposed by `w`.
pub fn face_gap_along(poly: &Polytope, w: &DVector<f64>, samples: usize, rng: &mut rng::Rng) -> Result<f64> {
    let face = exposed_face(poly, w, 1e-12)?;
    let h = support_function(poly, w)?;
    let mut gap: f64 = 0.0;
    for _ in 0..samples {
        let weights = dirichlet(face.len(), 1.0, rng);
        let mut alpha = DVector::zeros(poly.n_vertices());
        for (&j, &a) in face.iter().zip(weights.iter()) {
            alpha[j] = a;
        }
        gap = gap.max(h - w.dot(&poly.combine(&alpha)));
    }
    Ok(gap)
}

/// Random subset of `size` vertex indices, ascending.
pub fn random_subset(m: usize, size: usize, rng: &mut rng::Rng) -> Vec<usize> {
    let mut s = sample(rng, m, size.min(m)).into_vec();
    s.sort_unstable();
    s
}

/// Log-uniform temperature in `[lo, hi]`.
pub fn log_uniform(lo: f64, hi: f64, rng: &mut rng::Rng) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_key_returns_its_value() {
        let head = AttentionHead::new(DMatrix::from_element(1, 2, 0.3), DMatrix::from_row_slice(1, 2, &[4.0, 5.0]), 1.0).unwrap();
        let out = head_output(&head, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(out.weights[0], 1.0);
        assert_eq!(out.output.as_slice(), &[4.0, 5.0]);
    }

    #[test]
    fn two_logits_reference() {
        let w = softmax(&DVector::from_vec(vec![1.0, 0.0]), 1.0);
        let e = std::f64::consts::E;
        assert!((w[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((w[0] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn shift_invariance() {
        let l = DVector::from_vec(vec![0.2, -1.0, 3.0]);
        let a = softmax(&l, 0.7);
        let b = softmax(&l.add_scalar(123.0), 0.7);
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn cold_head_hits_vertex() {
        let keys = DMatrix::from_row_slice(2, 1, &[0.1, 0.0]);
        let values = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let head = AttentionHead::new(keys, values, 1e-3).unwrap();
        let b = low_temp_bound(&head, &DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!(b.winner, 0);
        assert!(b.bound < 1e-40);
        assert!(b.deviation <= 1e-12);
        assert!(b.holds());
    }

    #[test]
    fn hot_head_averages() {
        let keys = DMatrix::from_row_slice(3, 1, &[0.3, 0.1, -0.2]);
        let values = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 3.0, 0.0, 0.0, 3.0]);
        let head = AttentionHead::new(keys, values, 1e6).unwrap();
        let out = head_output(&head, &DVector::from_vec(vec![1.0])).unwrap();
        assert!((out.output - DVector::from_vec(vec![1.0, 1.0])).amax() < 1e-5);
    }

    #[test]
    fn tie_is_an_error() {
        let head = AttentionHead::new(DMatrix::from_element(2, 1, 1.0), DMatrix::from_row_slice(2, 1, &[0.0, 1.0]), 1.0).unwrap();
        assert!(low_temp_bound(&head, &DVector::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn transport_trivial_cases() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let z = DVector::from_vec(vec![0.25, 0.75]);
        let (l, r) = affine_transport(&a, &z, &DMatrix::identity(2, 2), &DVector::zeros(2)).unwrap();
        assert_eq!(l, r);
        let w = DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 0.5, 2.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let e1 = DVector::from_vec(vec![0.0, 1.0]);
        let (l, r) = affine_transport(&a, &e1, &w, &b).unwrap();
        let expect = &w * a.row(1).transpose() + &b;
        assert!((l - &expect).amax() < 1e-15 && (r - expect).amax() < 1e-15);
    }

    #[test]
    fn square_right_edge_face() {
        let sq = Polytope::new(DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0])).unwrap();
        let w = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(exposed_face(&sq, &w, 1e-12).unwrap(), vec![0, 1]);
        let mut rng = rng::stream(0, "t");
        assert!(face_gap_along(&sq, &w, 50, &mut rng).unwrap() <= 1e-12);
    }

    #[test]
    fn restriction_to_one_vertex() {
        let sq = Polytope::new(DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0])).unwrap();
        let rep = support_restriction_check(&sq, &[2], 20, 5, 1).unwrap();
        assert_eq!(rep.max_subpolytope_distance, 0.0);
        assert!(rep.passed);
        let full = support_restriction_check(&sq, &[0, 1, 2, 3], 20, 5, 1).unwrap();
        assert!(full.passed);
    }
}
