//! Straight-line versus k-NN-graph geodesic interpolation between tokens.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// `1 − cos θ`; a zero vector is at distance 1 from everything.
    Cosine,
    Euclidean,
}

impl DistanceMetric {
    fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            DistanceMetric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            DistanceMetric::Cosine => {
                let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
                for (x, y) in a.iter().zip(b) {
                    ab += x * y;
                    aa += x * x;
                    bb += y * y;
                }
                if aa == 0.0 || bb == 0.0 {
                    1.0
                } else {
                    (1.0 - ab / (aa.sqrt() * bb.sqrt())).max(0.0)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSelection {
    /// Uniformly random distinct pairs.
    Random,
    /// Random source, paired with the token farthest from it.
    Farthest,
    Explicit(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicConfig {
    pub k_nn: usize,
    pub pair_count: usize,
    pub steps: usize,
    pub seed: u64,
    pub metric: DistanceMetric,
    pub selection: PairSelection,
}

impl Default for GeodesicConfig {
    fn default() -> Self {
        Self {
            k_nn: 10,
            pair_count: 50,
            steps: 21,
            seed: 0,
            metric: DistanceMetric::Cosine,
            selection: PairSelection::Random,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GeodesicCurves {
    pub t: Vec<f64>,
    /// Mean over pairs of the distance from the straight interpolant to the data.
    pub linear: Vec<f64>,
    /// Same for the arc-length parametrised graph path.
    pub geodesic: Vec<f64>,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
    /// Mean over pairs of `max_t` of each curve.
    pub mean_max_linear: f64,
    pub mean_max_geodesic: f64,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Symmetric k-NN graph (edge if either endpoint lists the other), weighted
/// by the metric distance.
pub fn knn_graph(tokens: &DMatrix<f64>, k: usize, metric: DistanceMetric) -> Vec<Vec<(usize, f64)>> {
    let pts = rows_of(tokens);
    let n = pts.len();
    let lists: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<(usize, f64)> = (0..n).filter(|&j| j != i).map(|j| (j, metric.eval(&pts[i], &pts[j]))).collect();
            let kk = k.min(d.len());
            if kk < d.len() {
                d.select_nth_unstable_by(kk, |a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                d.truncate(kk);
            }
            d
        })
        .collect();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, list) in lists.iter().enumerate() {
        for &(j, w) in list {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
    }
    for a in &mut adj {
        a.sort_by(|x, y| x.0.cmp(&y.0));
        a.dedup_by_key(|e| e.0);
    }
    adj
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra; returns the node sequence from `source` to `target`.
pub fn shortest_path(adj: &[Vec<(usize, f64)>], source: usize, target: usize) -> Option<Vec<usize>> {
    let n = adj.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry(0.0, source));
    while let Some(Entry(d, u)) = heap.pop() {
        if u == target {
            break;
        }
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                prev[v] = u;
                heap.push(Entry(nd, v));
            }
        }
    }
    if !dist[target].is_finite() {
        return None;
    }
    let mut path = vec![target];
    let mut cur = target;
    while cur != source {
        cur = prev[cur];
        path.push(cur);
    }
    path.reverse();
    Some(path)
}

fn point_on_polyline(pts: &[Vec<f64>], path: &[usize], frac: f64) -> Vec<f64> {
    let seg: Vec<f64> = path
        .windows(2)
        .map(|w| DistanceMetric::Euclidean.eval(&pts[w[0]], &pts[w[1]]))
        .collect();
    let total: f64 = seg.iter().sum();
    let a = &pts[path[0]];
    if total == 0.0 || path.len() == 1 {
        return a.clone();
    }
    let mut goal = frac.clamp(0.0, 1.0) * total;
    for (w, &len) in path.windows(2).zip(&seg) {
        if goal <= len || std::ptr::eq(w, path.windows(2).last().unwrap()) {
            let s = if len > 0.0 { (goal / len).min(1.0) } else { 0.0 };
            let (p, q) = (&pts[w[0]], &pts[w[1]]);
            return p.iter().zip(q).map(|(x, y)| x + s * (y - x)).collect();
        }
        goal -= len;
    }
    pts[*path.last().unwrap()].clone()
}

fn distance_to_data(pts: &[Vec<f64>], x: &[f64], exclude: (usize, usize), metric: DistanceMetric) -> f64 {
    pts.iter()
        .enumerate()
        .filter(|(i, _)| *i != exclude.0 && *i != exclude.1)
        .map(|(_, p)| metric.eval(x, p))
        .fold(f64::INFINITY, f64::min)
}

fn select_pairs(pts: &[Vec<f64>], cfg: &GeodesicConfig) -> Vec<(usize, usize)> {
    let n = pts.len();
    let mut rng = rng::stream(cfg.seed, "geodesic-pairs");
    match &cfg.selection {
        PairSelection::Explicit(p) => p.clone(),
        PairSelection::Random => (0..cfg.pair_count)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                (i, j)
            })
            .collect(),
        PairSelection::Farthest => (0..cfg.pair_count)
            .map(|_| {
                let i = rng.random_range(0..n);
                let j = (0..n)
                    .filter(|&j| j != i)
                    .max_by(|&a, &b| cfg.metric.eval(&pts[i], &pts[a]).total_cmp(&cfg.metric.eval(&pts[i], &pts[b])).then(b.cmp(&a)))
                    .expect("n ≥ 2");
                (i, j)
            })
            .collect(),
    }
}

/// Distance-to-data along straight lines and along k-NN graph geodesics,
/// averaged over token pairs.
pub fn geodesic_experiment(tokens: &DMatrix<f64>, cfg: &GeodesicConfig) -> Result<GeodesicCurves> {
    let n = tokens.nrows();
    if !(cfg.k_nn >= 2 && n > cfg.k_nn) {
        return Err(Error::arg(format!("need N > k_nn ≥ 2, got N = {n}, k_nn = {}", cfg.k_nn)));
    }
    if cfg.steps < 2 {
        return Err(Error::arg("need at least 2 interpolation steps"));
    }
    let pts = rows_of(tokens);
    let adj = knn_graph(tokens, cfg.k_nn, cfg.metric);
    let pairs = select_pairs(&pts, cfg);
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= n || j >= n || i == j) {
        return Err(Error::arg(format!("invalid pair ({i}, {j})")));
    }
    let t: Vec<f64> = (0..cfg.steps).map(|s| s as f64 / (cfg.steps - 1) as f64).collect();

    let per_pair: Vec<Option<(Vec<f64>, Vec<f64>)>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let path = shortest_path(&adj, i, j)?;
            let mut lin = Vec::with_capacity(t.len());
            let mut geo = Vec::with_capacity(t.len());
            for &s in &t {
                let x: Vec<f64> = pts[i].iter().zip(&pts[j]).map(|(a, b)| a + s * (b - a)).collect();
                lin.push(distance_to_data(&pts, &x, (i, j), cfg.metric));
                let g = point_on_polyline(&pts, &path, s);
                geo.push(distance_to_data(&pts, &g, (i, j), cfg.metric));
            }
            Some((lin, geo))
        })
        .collect();

    let used: Vec<&(Vec<f64>, Vec<f64>)> = per_pair.iter().flatten().collect();
    let skipped = per_pair.len() - used.len();
    if used.is_empty() {
        return Err(Error::numeric("every sampled pair is disconnected in the k-NN graph"));
    }
    let k = used.len() as f64;
    let mean_curve = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<f64> {
        (0..t.len()).map(|s| used.iter().map(|c| pick(c)[s]).sum::<f64>() / k).collect()
    };
    let linear = mean_curve(|c| &c.0);
    let geodesic = mean_curve(|c| &c.1);
    let max_of = |v: &Vec<f64>| v.iter().copied().fold(0.0, f64::max);
    Ok(GeodesicCurves {
        mean_max_linear: used.iter().map(|c| max_of(&c.0)).sum::<f64>() / k,
        mean_max_geodesic: used.iter().map(|c| max_of(&c.1)).sum::<f64>() / k,
        t,
        linear,
        geodesic,
        pairs_used: used.len(),
        pairs_skipped: skipped,
    })
}

/// Points on a circle of radius 1 in the plane of the first two coordinates,
/// centred at `offset·e₃` (use `offset = 0` for a circle through the origin's plane).
pub fn circle_tokens(n: usize, d: usize, offset: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |i, k| {
        let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        match k {
            0 => th.cos(),
            1 => th.sin(),
            2 => offset,
            _ => 0.0,
        }
    })
}
