//! Reference dictionaries: random unit-sphere frames and approximate
//! Grassmannian frames, with coherence certificates.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{normalize_rows, sym_eigen_desc};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub c: usize,
    pub d: usize,
    pub coherence: f64,
    pub welch_bound: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest absolute inner product between distinct rows, after normalising rows.
pub fn mutual_coherence(dict: &DMatrix<f64>) -> Result<f64> {
    if dict.nrows() < 2 {
        return Err(Error::arg("coherence needs at least two atoms"));
    }
    let u = normalize_rows(dict)?;
    Ok(off_diagonal_max(&(&u * u.transpose())))
}

fn off_diagonal_max(g: &DMatrix<f64>) -> f64 {
    let mut mu: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in (i + 1)..g.ncols() {
            mu = mu.max(g[(i, j)].abs());
        }
    }
    mu
}

/// Welch lower bound `√((c−d)/(d(c−1)))` on the coherence of `c` unit vectors in
/// `R^d`. The flag is set when `c ≤ d`, where an orthonormal set exists and
/// the bound is 0.
pub fn welch_bound(c: usize, d: usize) -> (f64, bool) {
    if c <= d {
        return (0.0, true);
    }
    let (c, d) = (c as f64, d as f64);
    (((c - d) / (d * (c - 1.0))).sqrt(), false)
}

/// I.i.d. Gaussian rows normalised to the unit sphere.
pub fn random_sphere_dict(c: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng::stream(seed, "sphere-dict");
    loop {
        let m = DMatrix::from_fn(c, d, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        });
        // a zero Gaussian row has probability zero; redraw if it ever happens
        if let Ok(u) = normalize_rows(&m) {
            return u;
        }
    }
}

/// Nearest rank-`d` PSD factor of `g`, with rows renormalised to unit length.
fn psd_factor(g: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen_desc(g);
    let c = g.nrows();
    let mut f = DMatrix::zeros(c, d);
    for k in 0..d {
        let s = vals[k].max(0.0).sqrt();
        f.column_mut(k).copy_from(&(vecs.column(k) * s));
    }
    normalize_rows(&f)
}

/// Fresh starts tried when a run stalls above the Welch bound.
const RESTARTS: u64 = 8;

/// Alternating projection between the coherence-constrained Gram matrices and
/// the rank-`d` unit-diagonal PSD matrices, with the target coherence annealed
/// geometrically towards the Welch bound. A run that stalls is restarted from
/// a new seeded random frame (up to a fixed budget); the best iterate over all
/// runs is returned.
pub fn grassmannian_solve(c: usize, d: usize, iters: usize, seed: u64) -> Result<(DMatrix<f64>, FrameReport)> {
    if c <= d || d == 0 {
        return Err(Error::arg(format!("need c > d ≥ 1, got c = {c}, d = {d}")));
    }
    let (welch, _) = welch_bound(c, d);
    let mut best = random_sphere_dict(c, d, seed);
    let mut best_mu = mutual_coherence(&best)?;
    let mut iterations = 0;
    let mut converged = false;
    for restart in 0..RESTARTS {
        let mut dict = if restart == 0 {
            best.clone()
        } else {
            random_sphere_dict(c, d, rng::derive_seed(seed, &format!("frame-restart-{restart}")))
        };
        let mu0 = mutual_coherence(&dict)?;
        for t in 0..iters {
            iterations += 1;
            let target = welch + (mu0 - welch) * 0.97f64.powi(t as i32);
            let mut g = &dict * dict.transpose();
            for i in 0..c {
                for j in 0..c {
                    if i == j {
                        g[(i, j)] = 1.0;
                    } else if g[(i, j)].abs() > target {
                        // ties keep the sign of the original entry
                        g[(i, j)] = target.copysign(g[(i, j)]);
                    }
                }
            }
            dict = psd_factor(&g, d)?;
            let mu = mutual_coherence(&dict)?;
            if mu < best_mu {
                best_mu = mu;
                best = dict.clone();
            }
            if best_mu - welch <= 1e-6 * welch.max(1e-12) {
                converged = true;
                break;
            }
        }
        if converged {
            break;
        }
    }
    let report = FrameReport {
        c,
        d,
        coherence: best_mu,
        welch_bound: welch,
        iterations,
        converged,
    };
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coherence_examples() {
        assert_eq!(mutual_coherence(&DMatrix::identity(3, 3)).unwrap(), 0.0);
        let two = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        assert!((mutual_coherence(&two).unwrap() - 1.0).abs() < 1e-15);
        let tri = DMatrix::from_fn(3, 2, |i, k| {
            let th = 2.0 * std::f64::consts::PI * i as f64 / 3.0;
            if k == 0 { th.cos() } else { th.sin() }
        });
        assert!((mutual_coherence(&tri).unwrap() - 0.5).abs() < 1e-12);
        assert!(mutual_coherence(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn welch_examples() {
        assert!((welch_bound(6, 3).0 - 0.2f64.sqrt()).abs() < 1e-15);
        assert_eq!(welch_bound(3, 3), (0.0, true));
        assert_eq!(welch_bound(2, 1), (1.0, false));
    }

    #[test]
    fn sphere_dict_rows_are_unit_and_seeded() {
        let a = random_sphere_dict(20, 7, 4);
        for r in a.row_iter() {
            assert!((r.norm() - 1.0).abs() < 1e-12);
        }
        assert_eq!(a, random_sphere_dict(20, 7, 4));
    }

    #[test]
    fn high_dimensional_pairs_are_nearly_orthogonal() {
        for seed in 0..100 {
            let a = random_sphere_dict(2, 1000, seed);
            assert!(a.row(0).dot(&a.row(1)).abs() < 0.2);
        }
    }

    #[test]
    fn solver_small_frames() {
        // c lines in the plane pack at best π/c apart, so the optimum is cos(π/c);
        // for c = 4 that is 1/√2, above the (unattainable) Welch value √(1/3)
        let (dict, rep) = grassmannian_solve(4, 2, 2000, 0).unwrap();
        let planar = (std::f64::consts::PI / 4.0).cos();
        assert!(rep.coherence <= planar * 1.05, "{rep:?}");
        assert!(rep.coherence >= planar - 1e-9);
        assert!(rep.coherence >= rep.welch_bound - 1e-12);
        for r in dict.row_iter() {
            assert!((r.norm() - 1.0).abs() < 1e-12);
        }
        let (_, simplex) = grassmannian_solve(4, 3, 2000, 0).unwrap();
        assert!((simplex.coherence - 1.0 / 3.0).abs() < 0.01, "{simplex:?}");
    }

    #[test]
    fn never_worse_than_start() {
        for seed in 0..5 {
            let start = mutual_coherence(&random_sphere_dict(10, 4, seed)).unwrap();
            let (_, rep) = grassmannian_solve(10, 4, 300, seed).unwrap();
            assert!(rep.coherence <= start);
        }
    }
}
