//! Vertex-described polytopes, support functions and hull membership.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `conv(rows of vertices)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    vertices: DMatrix<f64>,
}

impl Polytope {
    pub fn new(vertices: DMatrix<f64>) -> Result<Self> {
        if vertices.nrows() == 0 || vertices.ncols() == 0 {
            return Err(Error::arg("polytope needs at least one vertex of positive dimension"));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("polytope vertices must be finite"));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &DMatrix<f64> {
        &self.vertices
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vertices.ncols()
    }

    pub fn vertex(&self, j: usize) -> DVector<f64> {
        self.vertices.row(j).transpose()
    }

    /// `αᵀV`.
    pub fn combine(&self, alpha: &DVector<f64>) -> DVector<f64> {
        self.vertices.tr_mul(alpha)
    }

    /// Largest pairwise vertex distance.
    pub fn diameter(&self) -> f64 {
        let m = self.n_vertices();
        let mut best: f64 = 0.0;
        for p in 0..m {
            for q in p + 1..m {
                best = best.max((self.vertices.row(p) - self.vertices.row(q)).norm());
            }
        }
        best
    }

    /// Sub-polytope spanned by the vertices in `subset`.
    pub fn restrict(&self, subset: &[usize]) -> Result<Self> {
        if subset.is_empty() {
            return Err(Error::arg("vertex subset must be nonempty"));
        }
        if let Some(&bad) = subset.iter().find(|&&j| j >= self.n_vertices()) {
            return Err(Error::arg(format!("vertex {bad} out of range")));
        }
        Self::new(self.vertices.select_rows(subset))
    }
}

/// `h(u) = max_j ⟨u, v_j⟩`.
pub fn support_function(poly: &Polytope, u: &DVector<f64>) -> Result<f64> {
    if u.len() != poly.dim() {
        return Err(Error::shape(format!("direction has length {}, polytope lives in R^{}", u.len(), poly.dim())));
    }
    if u.iter().all(|&x| x == 0.0) {
        return Err(Error::arg("support function needs a nonzero direction"));
    }
    let values = &poly.vertices * u;
    Ok(values.max())
}

/// Result of a nearest-point computation over a polytope.
#[derive(Debug, Clone)]
pub struct Membership {
    /// Distance from the query to the computed hull point.
    pub distance: f64,
    /// Convex weights of the hull point (certificate).
    pub alpha: DVector<f64>,
    /// Upper bound on `distance − optimal distance`, from the Frank–Wolfe gap.
    pub gap: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl Membership {
    pub fn is_member(&self, tol: f64) -> bool {
        self.distance <= tol
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// Minimise ‖Σ λ_i p_i‖ subject to Σ λ_i = 1 over the corral points.
fn affine_minimizer(points: &[Vec<f64>]) -> Option<Vec<f64>> {
    let s = points.len();
    let mut kkt = DMatrix::zeros(s + 1, s + 1);
    for a in 0..s {
        for b in a..s {
            let g = dot(&points[a], &points[b]);
            kkt[(a, b)] = g;
            kkt[(b, a)] = g;
        }
        kkt[(a, s)] = 1.0;
        kkt[(s, a)] = 1.0;
    }
    let mut rhs = DVector::zeros(s + 1);
    rhs[s] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    let lambda: Vec<f64> = sol.iter().take(s).copied().collect();
    lambda.iter().all(|v| v.is_finite()).then_some(lambda)
}

/// Atoms and convex weights of a min-norm point, with its certificate.
pub(crate) struct Corral<K> {
    pub keys: Vec<K>,
    pub weights: Vec<f64>,
    /// `√(2·FW gap)`, an upper bound on the excess distance.
    pub gap: f64,
    pub iterations: usize,
}

/// Wolfe's min-norm-point method over the convex hull of a (possibly
/// implicit) atom set, given a linear oracle returning an atom minimising
/// `⟨y, p⟩`. Atoms are identified by keys so the corral never holds one twice.
/// `scale` is the squared size of the atoms, used for the stall test.
pub(crate) fn min_norm_point<K, F>(start: (K, Vec<f64>), mut oracle: F, target: f64, scale: f64, max_iters: usize) -> Corral<K>
where
    K: PartialEq,
    F: FnMut(&[f64]) -> (K, Vec<f64>),
{
    let d = start.1.len();
    let mut y = start.1.clone();
    let mut keys = vec![start.0];
    let mut points = vec![start.1];
    let mut weights = vec![1.0];
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let mut prev_yy = f64::INFINITY;

    while iterations < max_iters {
        iterations += 1;
        let yy = dot(&y, &y);
        // ‖y‖² decreases strictly in exact arithmetic; a stall means rounding has taken over
        if yy >= prev_yy * (1.0 - 1e-14) {
            break;
        }
        prev_yy = yy;
        let (key, atom) = oracle(&y);
        let fw_gap = (yy - dot(&y, &atom)).max(0.0);
        gap = (2.0 * fw_gap).sqrt();
        if yy.sqrt() <= target || gap < target || fw_gap <= 1e-15 * scale {
            break;
        }
        if keys.contains(&key) {
            break;
        }
        keys.push(key);
        points.push(atom);
        weights.push(0.0);

        loop {
            let Some(lambda) = affine_minimizer(&points) else {
                keys.pop();
                points.pop();
                weights.pop();
                break;
            };
            if lambda.iter().all(|&l| l > 1e-14) {
                weights = lambda;
                break;
            }
            // move toward the affine minimiser until the first weight hits zero;
            // weights at or below the threshold count as zero so the step stays ≤ 1
            let lambda: Vec<f64> = lambda.into_iter().map(|l| if l <= 1e-14 { l.min(0.0) } else { l }).collect();
            let mut theta = 1.0;
            let mut hit = None;
            for (i, (&w, &l)) in weights.iter().zip(&lambda).enumerate() {
                if l <= 0.0 && w - l > 0.0 {
                    let t = w / (w - l);
                    if hit.is_none() || t < theta {
                        theta = t;
                        hit = Some(i);
                    }
                }
            }
            for (w, &l) in weights.iter_mut().zip(&lambda) {
                *w = (1.0 - theta) * *w + theta * l;
            }
            if let Some(h) = hit {
                weights[h] = 0.0;
            }
            let mut i = 0;
            while i < keys.len() {
                if weights[i] <= 1e-16 {
                    keys.remove(i);
                    points.remove(i);
                    weights.remove(i);
                } else {
                    i += 1;
                }
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
        }
        y = vec![0.0; d];
        for (p, &w) in points.iter().zip(&weights) {
            for k in 0..d {
                y[k] += w * p[k];
            }
        }
    }
    Corral {
        keys,
        weights,
        gap,
        iterations,
    }
}

/// Nearest point of `conv(V)` to `point`.
///
/// Frank–Wolfe iterations whose linear oracle picks the vertex minimising
/// `⟨∇, v_j⟩`; after every oracle call the weights are re-optimised over the
/// active vertex set (fully corrective step, dropping vertices whose weight
/// reaches zero). The returned `gap` bounds the excess distance, so
/// `converged` certifies the answer to within `tol / 10`.
pub fn hull_membership(point: &DVector<f64>, poly: &Polytope, tol: f64, max_iters: usize) -> Result<Membership> {
    if point.len() != poly.dim() {
        return Err(Error::shape(format!("point has length {}, polytope lives in R^{}", point.len(), poly.dim())));
    }
    let m = poly.n_vertices();
    let d = poly.dim();
    let shifted: Vec<Vec<f64>> = (0..m)
        .map(|j| (0..d).map(|k| poly.vertices[(j, k)] - point[k]).collect())
        .collect();
    let scale = shifted.iter().map(|p| dot(p, p)).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let start = (0..m)
        .min_by(|&a, &b| dot(&shifted[a], &shifted[a]).total_cmp(&dot(&shifted[b], &shifted[b])))
        .expect("nonempty polytope");
    let target = tol / 10.0;
    let oracle = |y: &[f64]| {
        let j = (0..m)
            .map(|j| (j, dot(y, &shifted[j])))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("nonempty polytope")
            .0;
        (j, shifted[j].clone())
    };
    let corral = min_norm_point((start, shifted[start].clone()), oracle, target, scale, max_iters);

    let mut alpha = DVector::zeros(m);
    for (&c, &w) in corral.keys.iter().zip(&corral.weights) {
        alpha[c] = w;
    }
    let distance = (poly.combine(&alpha) - point).norm();
    Ok(Membership {
        distance,
        alpha,
        gap: corral.gap,
        converged: distance <= target || corral.gap < target,
        iterations: corral.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Polytope {
        Polytope::new(DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0])).unwrap()
    }

    #[test]
    fn vertex_is_member() {
        let p = square();
        let m = hull_membership(&p.vertex(0), &p, 1e-9, 100).unwrap();
        assert_eq!(m.distance, 0.0);
        assert_eq!(m.alpha[0], 1.0);
    }

    #[test]
    fn midpoint_is_member() {
        let p = Polytope::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 4.0])).unwrap();
        let m = hull_membership(&DVector::from_vec(vec![1.0, 2.0]), &p, 1e-8, 100).unwrap();
        assert!(m.distance <= 1e-8);
        assert!((m.alpha[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn outside_segment_projects_to_endpoint() {
        let p = Polytope::new(DMatrix::from_row_slice(2, 1, &[0.0, 1.0])).unwrap();
        let m = hull_membership(&DVector::from_vec(vec![2.0]), &p, 1e-9, 100).unwrap();
        assert!((m.distance - 1.0).abs() < 1e-12);
        assert_eq!(m.alpha.as_slice(), &[0.0, 1.0]);
        assert!(m.converged);
    }

    #[test]
    fn interior_point_of_square() {
        let p = square();
        let m = hull_membership(&DVector::from_vec(vec![0.3, -0.2]), &p, 1e-10, 100).unwrap();
        assert!(m.distance <= 1e-10, "{m:?}");
        assert!((m.alpha.sum() - 1.0).abs() < 1e-12);
        assert!(m.alpha.iter().all(|&a| a >= 0.0));
    }

    #[test]
    fn support_of_rectangle() {
        let r = Polytope::new(DMatrix::from_row_slice(4, 2, &[2.0, 3.0, 2.0, -3.0, -2.0, 3.0, -2.0, -3.0])).unwrap();
        assert_eq!(support_function(&r, &DVector::from_vec(vec![1.0, 0.0])).unwrap(), 2.0);
        assert_eq!(support_function(&r, &DVector::from_vec(vec![0.0, -1.0])).unwrap(), 3.0);
        assert!(support_function(&r, &DVector::zeros(2)).is_err());
    }
}
