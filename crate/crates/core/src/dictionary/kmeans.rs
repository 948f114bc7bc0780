//! Lloyd's k-means with k-means++ seeding.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone)]
pub struct KMeansModel {
    /// `m × d`, one centroid per row.
    pub centroids: DMatrix<f64>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances from each sample to its assigned centroid.
    pub inertia: f64,
    /// Inertia after every update step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], m: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // every remaining point coincides with a centroid
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push(points[pick].clone());
        let c = centroids.last().unwrap().clone();
        d2.par_iter_mut().zip(points.par_iter()).for_each(|(w, p)| *w = w.min(sq_dist(p, &c)));
    }
    centroids
}

fn update_means(points: &[Vec<f64>], assign: &[usize], m: usize, d: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; d]; m];
    let mut counts = vec![0usize; m];
    for (p, &k) in points.iter().zip(assign) {
        counts[k] += 1;
        for (s, x) in sums[k].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    (sums, counts)
}

/// Cluster the rows of `data` into `m` groups.
///
/// Empty clusters are re-seeded with the sample farthest from its current
/// centroid, which then moves into the empty cluster; every returned
/// centroid is therefore the mean of a nonempty assigned set.
pub fn kmeans(data: &DMatrix<f64>, m: usize, iters: usize, seed: u64) -> Result<KMeansModel> {
    let n = data.nrows();
    let d = data.ncols();
    if m == 0 || m > n {
        return Err(Error::arg(format!("k-means needs 1 ≤ m ≤ n, got m = {m}, n = {n}")));
    }
    let points = rows_of(data);
    let mut rng = rng::stream(seed, "kmeans");
    let mut centroids = plus_plus_init(&points, m, &mut rng);
    let mut assign: Vec<usize> = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..iters.max(1) {
        iterations += 1;
        let next: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
        let changed = next.iter().zip(&assign).any(|(a, &b)| a.0 != b);
        for (a, (k, _)) in assign.iter_mut().zip(&next) {
            *a = *k;
        }
        let (mut means, mut counts) = update_means(&points, &assign, m, d);
        // re-seed empty clusters one at a time
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let far = (0..n)
                .filter(|&i| counts[assign[i]] > 1)
                .max_by(|&a, &b| {
                    sq_dist(&points[a], &means[assign[a]])
                        .total_cmp(&sq_dist(&points[b], &means[assign[b]]))
                        .then(b.cmp(&a))
                })
                .expect("m ≤ n guarantees a cluster with two or more members");
            assign[far] = empty;
            let (m2, c2) = update_means(&points, &assign, m, d);
            means = m2;
            counts = c2;
        }
        centroids = means;
        let inertia: f64 = points.iter().zip(&assign).map(|(p, &k)| sq_dist(p, &centroids[k])).sum();
        trace.push(inertia);
        if !changed {
            break;
        }
    }

    let inertia = *trace.last().expect("at least one iteration");
    Ok(KMeansModel {
        centroids: DMatrix::from_fn(m, d, |i, j| centroids[i][j]),
        assignments: assign,
        inertia,
        inertia_trace: trace,
        iterations,
    })
}
