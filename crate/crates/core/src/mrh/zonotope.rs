//! Two different segment decompositions of the same rectangle, compared
//! through their support functions.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::polytope::{support_function, Polytope};
use crate::error::{Error, Result};
use crate::rng;

/// Centered segment `[−h, h]·direction`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment {
    pub direction: Vec<f64>,
    pub half_length: f64,
}

impl Segment {
    pub fn new(direction: Vec<f64>, half_length: f64) -> Self {
        Self { direction, half_length }
    }

    pub fn polytope(&self) -> Polytope {
        let d = self.direction.len();
        let v = DMatrix::from_fn(2, d, |i, k| if i == 0 { 1.0 } else { -1.0 } * self.half_length * self.direction[k]);
        Polytope::new(v).expect("finite segment")
    }
}

/// Support function of a Minkowski sum of segments, evaluated summand by summand.
pub fn decomposition_support(segments: &[Segment], u: &DVector<f64>) -> Result<f64> {
    segments.iter().map(|s| support_function(&s.polytope(), u)).sum()
}

fn canonical(segments: &[Segment]) -> Vec<(Vec<u64>, u64)> {
    let mut v: Vec<_> = segments
        .iter()
        .map(|s| (s.direction.iter().map(|x| x.to_bits()).collect(), s.half_length.to_bits()))
        .collect();
    v.sort();
    v
}

#[derive(Debug, Clone, Serialize)]
pub struct ZonotopeReport {
    pub a: f64,
    pub b: f64,
    pub split: f64,
    pub directions: usize,
    pub two_segment: Vec<Segment>,
    pub three_segment: Vec<Segment>,
    /// Largest `|Σh(D1) − Σh(D2)|` over the sampled directions.
    pub max_discrepancy: f64,
    /// Largest deviation of either sum from the rectangle's own support function.
    pub max_rectangle_discrepancy: f64,
    pub multisets_differ: bool,
    pub passed: bool,
}

/// Compare `{[−a,a]e₁, [−b,b]e₂}` against
/// `{[−αa,αa]e₁, [−(1−α)a,(1−α)a]e₁, [−b,b]e₂}` on `n_dirs` random unit directions.
pub fn zonotope_nonidentifiability(a: f64, b: f64, split: f64, n_dirs: usize, seed: u64) -> Result<ZonotopeReport> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::arg(format!("split must lie in (0, 1), got {split}")));
    }
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::arg("extents must be positive"));
    }
    let e1 = vec![1.0, 0.0];
    let e2 = vec![0.0, 1.0];
    let two = vec![Segment::new(e1.clone(), a), Segment::new(e2.clone(), b)];
    let three = vec![
        Segment::new(e1.clone(), split * a),
        Segment::new(e1, (1.0 - split) * a),
        Segment::new(e2, b),
    ];
    let rect = Polytope::new(DMatrix::from_row_slice(4, 2, &[a, b, a, -b, -a, b, -a, -b]))?;
    let mut rng = rng::stream(seed, "zonotope");
    let mut max_disc: f64 = 0.0;
    let mut max_rect: f64 = 0.0;
    for _ in 0..n_dirs {
        let mut u = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
        let n = u.norm();
        if n == 0.0 {
            continue;
        }
        u /= n;
        let h1 = decomposition_support(&two, &u)?;
        let h2 = decomposition_support(&three, &u)?;
        let hx = support_function(&rect, &u)?;
        max_disc = max_disc.max((h1 - h2).abs());
        max_rect = max_rect.max((h1 - hx).abs()).max((h2 - hx).abs());
    }
    let multisets_differ = canonical(&two) != canonical(&three);
    Ok(ZonotopeReport {
        a,
        b,
        split,
        directions: n_dirs,
        two_segment: two,
        three_segment: three,
        max_discrepancy: max_disc,
        max_rectangle_discrepancy: max_rect,
        multisets_differ,
        passed: max_disc <= 1e-12 && multisets_differ,
    })
}
