//! Block-convex (Minkowski-sum) models, their membership test and a
//! synthetic data generator.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

use super::polytope::min_norm_point;
use crate::error::{Error, Result};
use crate::rng;

/// One summand: archetypes (rows) and an optional linear output map applied
/// to each archetype.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub archetypes: DMatrix<f64>,
    /// `d_out × d_in`; `None` is the identity.
    pub output_map: Option<DMatrix<f64>>,
}

impl Tile {
    pub fn new(archetypes: DMatrix<f64>) -> Self {
        Self {
            archetypes,
            output_map: None,
        }
    }

    pub fn with_map(archetypes: DMatrix<f64>, map: DMatrix<f64>) -> Self {
        Self {
            archetypes,
            output_map: Some(map),
        }
    }

    /// Archetypes after the output map, one per row.
    pub fn effective_vertices(&self) -> DMatrix<f64> {
        match &self.output_map {
            Some(w) => &self.archetypes * w.transpose(),
            None => self.archetypes.clone(),
        }
    }

    pub fn size(&self) -> usize {
        self.archetypes.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.output_map.as_ref().map_or(self.archetypes.ncols(), |w| w.nrows())
    }
}

/// Ordered list of tiles; a sample activates `n_active` of them and adds one
/// convex combination per active tile.
#[derive(Debug, Clone, PartialEq)]
pub struct MinkowskiModel {
    tiles: Vec<Tile>,
    n_active: usize,
}

impl MinkowskiModel {
    pub fn new(tiles: Vec<Tile>, n_active: usize) -> Result<Self> {
        if tiles.is_empty() {
            return Err(Error::arg("model needs at least one tile"));
        }
        if n_active == 0 || n_active > tiles.len() {
            return Err(Error::arg(format!("n_active must lie in 1..={}, got {n_active}", tiles.len())));
        }
        let d = tiles[0].out_dim();
        for (h, t) in tiles.iter().enumerate() {
            if t.size() == 0 {
                return Err(Error::arg(format!("tile {h} is empty")));
            }
            if t.out_dim() != d {
                return Err(Error::shape(format!("tile {h} maps to R^{}, tile 0 to R^{d}", t.out_dim())));
            }
            if let Some(w) = &t.output_map {
                if w.ncols() != t.archetypes.ncols() {
                    return Err(Error::shape(format!("tile {h}: output map does not match archetype width")));
                }
            }
        }
        Ok(Self { tiles, n_active })
    }

    /// Tiles of `per_tile` archetypes each, scattered around a random anchor:
    /// anchors are standard normal in `R^d` and archetypes add independent
    /// normal offsets of scale `spread`.
    pub fn random_anchored(n_tiles: usize, per_tile: usize, d: usize, spread: f64, n_active: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, "mrh-model");
        let mut tiles = Vec::with_capacity(n_tiles);
        for _ in 0..n_tiles {
            let anchor: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let arch = DMatrix::from_fn(per_tile, d, |_, k| {
                let e: f64 = StandardNormal.sample(&mut rng);
                anchor[k] + spread * e
            });
            tiles.push(Tile::new(arch));
        }
        Self::new(tiles, n_active)
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn n_active(&self) -> usize {
        self.n_active
    }

    pub fn dim(&self) -> usize {
        self.tiles[0].out_dim()
    }

    pub fn total_archetypes(&self) -> usize {
        self.tiles.iter().map(Tile::size).sum()
    }

    /// Same tiles restricted to a subset, every one of them active.
    pub fn restrict(&self, subset: &[usize]) -> Result<Self> {
        let tiles = subset
            .iter()
            .map(|&h| self.tiles.get(h).cloned().ok_or_else(|| Error::arg(format!("tile {h} out of range"))))
            .collect::<Result<Vec<_>>>()?;
        let n = tiles.len();
        Self::new(tiles, n)
    }

    /// All effective archetypes stacked in tile order.
    pub fn stacked_archetypes(&self) -> DMatrix<f64> {
        let blocks: Vec<DMatrix<f64>> = self.tiles.iter().map(Tile::effective_vertices).collect();
        let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
        let mut out = DMatrix::zeros(rows, self.dim());
        let mut r = 0;
        for b in &blocks {
            out.rows_mut(r, b.nrows()).copy_from(b);
            r += b.nrows();
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct MinkowskiMembership {
    pub distance: f64,
    /// One convex weight vector per tile.
    pub codes: Vec<DVector<f64>>,
    pub gap: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Nearest point of `⊕_h conv(W_h V_h)` to `point`. The sum is the convex
/// hull of all vertex sums; the min-norm-point method runs over it directly,
/// with a linear oracle that adds the per-tile minimisers. Every tile of the
/// model takes part; use [`MinkowskiModel::restrict`] to pick a subset.
pub fn minkowski_membership(point: &DVector<f64>, model: &MinkowskiModel, tol: f64, max_iters: usize) -> Result<MinkowskiMembership> {
    if point.len() != model.dim() {
        return Err(Error::shape(format!("point has length {}, model lives in R^{}", point.len(), model.dim())));
    }
    let verts: Vec<DMatrix<f64>> = model.tiles.iter().map(Tile::effective_vertices).collect();
    let d = point.len();
    let atom = |choice: &[usize]| -> Vec<f64> {
        (0..d)
            .map(|k| verts.iter().zip(choice).map(|(v, &j)| v[(j, k)]).sum::<f64>() - point[k])
            .collect()
    };
    let oracle = |y: &[f64]| {
        let y = DVector::from_column_slice(y);
        let choice: Vec<usize> = verts
            .iter()
            .map(|v| {
                let scores = v * &y;
                (0..scores.len()).min_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b))).expect("nonempty tile")
            })
            .collect();
        let p = atom(&choice);
        (choice, p)
    };
    // start from the vertex sum reaching furthest along the point's direction
    let neg = -point;
    let (first, p0) = oracle(neg.as_slice());
    let radius: f64 = verts.iter().map(|v| v.row_iter().map(|r| r.norm()).fold(0.0, f64::max)).sum::<f64>() + point.norm();
    let target = tol / 10.0;
    let corral = min_norm_point((first, p0), oracle, target, (radius * radius).max(f64::MIN_POSITIVE), max_iters);

    let mut codes: Vec<DVector<f64>> = verts.iter().map(|v| DVector::zeros(v.nrows())).collect();
    for (choice, &w) in corral.keys.iter().zip(&corral.weights) {
        for (code, &j) in codes.iter_mut().zip(choice) {
            code[j] += w;
        }
    }
    let mut sum = DVector::zeros(d);
    for (v, a) in verts.iter().zip(&codes) {
        sum += v.transpose() * a;
    }
    let distance = (&sum - point).norm();
    Ok(MinkowskiMembership {
        distance,
        codes,
        gap: corral.gap,
        converged: distance <= target || corral.gap < target,
        iterations: corral.iterations,
    })
}

/// Ground-truth block code of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCode {
    /// Active tiles, ascending.
    pub tiles: Vec<usize>,
    /// Convex weights, one vector per active tile.
    pub weights: Vec<DVector<f64>>,
}

impl BlockCode {
    /// Dense code over all archetypes of the model, in tile order.
    pub fn to_dense(&self, model: &MinkowskiModel) -> DVector<f64> {
        let mut offsets = Vec::with_capacity(model.tiles.len());
        let mut acc = 0;
        for t in &model.tiles {
            offsets.push(acc);
            acc += t.size();
        }
        let mut out = DVector::zeros(acc);
        for (&h, w) in self.tiles.iter().zip(&self.weights) {
            out.rows_mut(offsets[h], w.len()).copy_from(w);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct MrhSamples {
    /// `n × d`, one sample per row.
    pub samples: DMatrix<f64>,
    pub codes: Vec<BlockCode>,
}

/// Dirichlet draw on the simplex of dimension `k`. `concentration = 1` is the
/// uniform distribution.
pub fn dirichlet(k: usize, concentration: f64, rng: &mut rng::Rng) -> DVector<f64> {
    let draws: Vec<f64> = if concentration == 1.0 {
        (0..k).map(|_| Exp1.sample(rng)).collect()
    } else {
        let g = Gamma::new(concentration, 1.0).expect("positive concentration");
        (0..k).map(|_| g.sample(rng)).collect()
    };
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        DVector::from_vec(draws) / total
    } else {
        // all gamma draws underflowed: fall back to a uniformly chosen vertex
        let mut v = DVector::zeros(k);
        v[rand::Rng::random_range(rng, 0..k)] = 1.0;
        v
    }
}

/// Sample `n` points: a uniformly random set of `n_active` tiles per sample,
/// symmetric Dirichlet weights within each active tile.
pub fn generate_mrh_data(model: &MinkowskiModel, n: usize, concentration: f64, seed: u64) -> Result<MrhSamples> {
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(Error::arg("Dirichlet concentration must be positive"));
    }
    let mut rng = rng::stream(seed, "mrh-data");
    let d = model.dim();
    let verts: Vec<DMatrix<f64>> = model.tiles.iter().map(Tile::effective_vertices).collect();
    let mut samples = DMatrix::zeros(n, d);
    let mut codes = Vec::with_capacity(n);
    for i in 0..n {
        let mut tiles = sample(&mut rng, model.tiles.len(), model.n_active).into_vec();
        tiles.sort_unstable();
        let mut weights = Vec::with_capacity(tiles.len());
        for &h in &tiles {
            let w = dirichlet(verts[h].nrows(), concentration, &mut rng);
            let x = verts[h].tr_mul(&w);
            for k in 0..d {
                samples[(i, k)] += x[k];
            }
            weights.push(w);
        }
        codes.push(BlockCode { tiles, weights });
    }
    Ok(MrhSamples { samples, codes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrh::polytope::{hull_membership, Polytope};

    fn rectangle_model() -> MinkowskiModel {
        let e1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let e2 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -1.0]);
        MinkowskiModel::new(vec![Tile::new(e1), Tile::new(e2)], 2).unwrap()
    }

    #[test]
    fn rectangle_point_codes() {
        let m = minkowski_membership(&DVector::from_vec(vec![0.3, -0.7]), &rectangle_model(), 1e-8, 100).unwrap();
        assert!(m.distance <= 1e-8);
        assert!((m.codes[0][0] - 0.65).abs() < 1e-9 && (m.codes[0][1] - 0.35).abs() < 1e-9);
        assert!((m.codes[1][0] - 0.15).abs() < 1e-9 && (m.codes[1][1] - 0.85).abs() < 1e-9);
    }

    #[test]
    fn vertex_sum_is_member() {
        let model = MinkowskiModel::random_anchored(3, 4, 5, 1.0, 3, 9).unwrap();
        let p = model.tiles()[0].archetypes.row(1) + model.tiles()[1].archetypes.row(3) + model.tiles()[2].archetypes.row(0);
        let m = minkowski_membership(&p.transpose(), &model, 1e-8, 1000).unwrap();
        assert!(m.distance <= 1e-8, "{m:?}");
    }

    #[test]
    fn single_tile_matches_hull() {
        let model = MinkowskiModel::random_anchored(1, 5, 3, 1.0, 1, 2).unwrap();
        let poly = Polytope::new(model.tiles()[0].archetypes.clone()).unwrap();
        let q = DVector::from_vec(vec![3.0, -1.0, 0.5]);
        let a = minkowski_membership(&q, &model, 1e-9, 100).unwrap();
        let b = hull_membership(&q, &poly, 1e-9, 1000).unwrap();
        assert!((a.distance - b.distance).abs() < 1e-10);
    }

    #[test]
    fn single_archetype_generator() {
        let arch = DMatrix::from_row_slice(1, 2, &[2.0, -1.0]);
        let model = MinkowskiModel::new(vec![Tile::new(arch)], 1).unwrap();
        let s = generate_mrh_data(&model, 5, 1.0, 0).unwrap();
        for r in s.samples.row_iter() {
            assert_eq!(r[0], 2.0);
            assert_eq!(r[1], -1.0);
        }
    }

    #[test]
    fn generator_codes_reproduce_samples() {
        let model = MinkowskiModel::random_anchored(4, 3, 6, 0.5, 2, 1).unwrap();
        let s = generate_mrh_data(&model, 20, 1.0, 3).unwrap();
        let stacked = model.stacked_archetypes();
        for (i, code) in s.codes.iter().enumerate() {
            assert_eq!(code.tiles.len(), 2);
            let x = stacked.tr_mul(&code.to_dense(&model));
            assert!((x - s.samples.row(i).transpose()).norm() < 1e-12);
            for w in &code.weights {
                assert!((w.sum() - 1.0).abs() < 1e-12);
            }
        }
    }
}
