//! Monte-Carlo verification of the attention-geometry lemmas.
//!
//! Every trial draws from its own seeded stream, so results do not depend on
//! the thread count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::attention::{
    affine_transport, head_output, log_uniform, low_temp_bound, multi_head_model, multi_head_sample,
    random_subset, support_restriction_check, AttentionHead,
};
use super::minkowski::{dirichlet, generate_mrh_data, minkowski_membership, MinkowskiModel};
use super::polytope::{hull_membership, support_function, Polytope};
use super::zonotope::zonotope_nonidentifiability;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    All,
    SingleHead,
    MultiHead,
    AffineTransport,
    LowTemperature,
    SupportRestriction,
    SupportFunction,
    Zonotope,
    Generator,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::SingleHead,
        Suite::MultiHead,
        Suite::AffineTransport,
        Suite::LowTemperature,
        Suite::SupportRestriction,
        Suite::SupportFunction,
        Suite::Zonotope,
        Suite::Generator,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
            .map_err(|_| Error::arg(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub seed: u64,
    pub single_head_trials: usize,
    pub multi_head_trials: usize,
    pub transport_trials: usize,
    pub low_temp_trials: usize,
    pub support_trials: usize,
    pub zonotope_splits: Vec<f64>,
    pub zonotope_directions: usize,
    pub generator_samples: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            single_head_trials: 10_000,
            multi_head_trials: 1_000,
            transport_trials: 1_000,
            low_temp_trials: 10_000,
            support_trials: 200,
            zonotope_splits: vec![0.25, 0.5, 0.3],
            zonotope_directions: 10_000,
            generator_samples: 500,
        }
    }
}

/// Outcome of one claim: `worst` is the largest observed error statistic,
/// compared against `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimVerdict {
    pub claim: String,
    pub trials: usize,
    pub worst: f64,
    pub threshold: f64,
    pub failures: usize,
    pub passed: bool,
}

impl ClaimVerdict {
    fn from_errors(claim: &str, errors: &[f64], threshold: f64) -> Self {
        let failures = errors.iter().filter(|&&e| !(e <= threshold)).count();
        Self {
            claim: claim.to_string(),
            trials: errors.len(),
            worst: errors.iter().copied().fold(0.0, |a: f64, b| if b.is_nan() { f64::NAN } else { a.max(b) }),
            threshold,
            failures,
            passed: failures == 0,
        }
    }
}

fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut rng::Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| { let z: f64 = StandardNormal.sample(rng); scale * z })
}

fn gaussian_vec(n: usize, rng: &mut rng::Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn trials<T, F>(seed: u64, name: &str, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut rng::Rng) -> Result<T> + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| f(&mut rng::trial(seed, name, i as u64)))
        .collect()
}

fn single_head(cfg: &VerifyConfig) -> Result<Vec<ClaimVerdict>> {
    let errs = trials(cfg.seed, "single-head", cfg.single_head_trials, |rng| {
        let m = rng.random_range(1..=12);
        let d_v = rng.random_range(2..=8);
        let tau = log_uniform(0.05, 20.0, rng);
        let head = AttentionHead::random(m, 6, d_v, tau, rng)?;
        let y = head_output(&head, &gaussian_vec(6, rng))?;
        Ok(hull_membership(&y.output, &head.value_polytope(), 1e-6, 10_000)?.distance)
    })?;
    Ok(vec![ClaimVerdict::from_errors("single_head_output_in_value_hull", &errs, 1e-6)])
}

fn multi_head(cfg: &VerifyConfig) -> Result<Vec<ClaimVerdict>> {
    let errs = trials(cfg.seed, "multi-head", cfg.multi_head_trials, |rng| {
        let h = rng.random_range(2..=4);
        let d = 8;
        let d_v = 4;
        let heads = (0..h)
            .map(|_| {
                let m = rng.random_range(2..=6);
                let tau = log_uniform(0.05, 20.0, rng);
                let head = AttentionHead::random(m, 6, d_v, tau, rng)?;
                Ok((head, gaussian(d, d_v, 0.5, rng)))
            })
            .collect::<Result<Vec<_>>>()?;
        let y = multi_head_sample(&heads, &gaussian_vec(6, rng))?;
        let model = multi_head_model(&heads)?;
        Ok(minkowski_membership(&y.output, &model, 1e-5, 10_000)?.distance)
    })?;
    Ok(vec![ClaimVerdict::from_errors("multi_head_output_in_minkowski_sum", &errs, 1e-5)])
}

fn transport(cfg: &VerifyConfig) -> Result<Vec<ClaimVerdict>> {
    let errs = trials(cfg.seed, "affine-transport", cfg.transport_trials, |rng| {
        let m = rng.random_range(1..=10);
        let d = rng.random_range(1..=12);
        let dp = rng.random_range(1..=12);
        let a = gaussian(m, d, 1.0, rng);
        let z = dirichlet(m, 1.0, rng);
        let w = gaussian(dp, d, 1.0 / (d as f64).sqrt(), rng);
        let b = gaussian_vec(dp, rng);
        let (lhs, rhs) = affine_transport(&a, &z, &w, &b)?;
        Ok((lhs - rhs).amax())
    })?;
    Ok(vec![ClaimVerdict::from_errors("affine_transport_identity", &errs, 1e-12)])
}

fn low_temperature(cfg: &VerifyConfig) -> Result<Vec<ClaimVerdict>> {
    // excess = deviation − bound, positive only on a violation
    let excess = trials(cfg.seed, "low-temperature", cfg.low_temp_trials, |rng| {
        let m = rng.random_range(2..=10);
        let d_v = rng.random_range(1..=6);
        let tau = log_uniform(1e-3, 10.0, rng);
        let head = AttentionHead::random(m, 4, d_v, tau, rng)?;
        let b = low_temp_bound(&head, &gaussian_vec(4, rng))?;
        Ok(if b.holds() { 0.0 } else { b.deviation - b.bound })
    })?;
    // along a cooling schedule the bound shrinks monotonically and keeps dominating
    // the deviation, which therefore vanishes
    let schedule: Vec<f64> = (0..=40).map(|s| 10f64.powf(1.0 - 0.125 * s as f64)).collect();
    let cooling = trials(cfg.seed, "cooling", cfg.low_temp_trials / 10, |rng| {
        let m = rng.random_range(2..=10);
        let head = AttentionHead::random(m, 4, 3, 1.0, rng)?;
        let q = gaussian_vec(4, rng);
        let mut prev = f64::INFINITY;
        let mut worst: f64 = 0.0;
        let mut last = None;
        for &tau in &schedule {
            let h = AttentionHead::new(head.keys.clone(), head.values.clone(), tau)?;
            let b = low_temp_bound(&h, &q)?;
            if b.bound > prev || !b.holds() {
                worst = worst.max(1.0);
            }
            prev = b.bound;
            last = Some(b);
        }
        let last = last.expect("nonempty schedule");
        // the final temperature is 1e-4: any margin above ~0.01 makes the residual negligible
        let margin = {
            let l = head.logits(&q)?;
            let top = l[last.winner];
            l.iter().enumerate().filter(|(j, _)| *j != last.winner).map(|(_, &x)| top - x).fold(f64::INFINITY, f64::min)
        };
        if margin > 0.01 {
            worst = worst.max(last.deviation);
        }
        Ok(worst)
    })?;
    Ok(vec![
        ClaimVerdict::from_errors("low_temperature_bound", &excess, 0.0),
        ClaimVerdict::from_errors("low_temperature_collapse", &cooling, 1e-12),
    ])
}

fn support_restriction(cfg: &VerifyConfig) -> Result<Vec<ClaimVerdict>> {
    let errs = trials(cfg.seed, "support-restriction", cfg.support_trials, |rng| {
        let m = rng.random_range(2..=10);
        let d = rng.random_range(2..=5);
        let poly = Polytope::new(gaussian(m, d, 1.0, rng))?;
        let size = rng.random_range(1..=m);
        let subset = random_subset(m, size, rng);
        let seed = rng.random();
        let rep = support_restriction_check(&poly, &subset, 20, 5, seed)?;
        Ok(if rep.passed { rep.max_subpolytope_distance.max(rep.max_face_gap) } else { f64::INFINITY })
    })?;
    Ok(vec![ClaimVerdict::from_errors("support_restriction_subpolytope", &errs, 1e-8)])
}

fn support_sublinear(cfg: &VerifyConfig) -> Result<Vec<ClaimVerdict>> {
    let (sub, homo): (Vec<f64>, Vec<f64>) = trials(cfg.seed, "support-function", cfg.support_trials * 10, |rng| {
        let m = rng.random_range(1..=10);
        let d = rng.random_range(1..=5);
        let poly = Polytope::new(gaussian(m, d, 1.0, rng))?;
        let u = gaussian_vec(d, rng);
        let v = gaussian_vec(d, rng);
        let alpha = log_uniform(1e-3, 1e3, rng);
        let excess = support_function(&poly, &(&u + &v))? - support_function(&poly, &u)? - support_function(&poly, &v)?;
        let homo = (support_function(&poly, &(&u * alpha))? - alpha * support_function(&poly, &u)?).abs() / alpha.max(1.0);
        Ok((excess.max(0.0), homo))
    })?
    .into_iter()
    .unzip();
    Ok(vec![
        ClaimVerdict::from_errors("support_function_subadditive", &sub, 1e-9),
        ClaimVerdict::from_errors("support_function_homogeneous", &homo, 1e-9),
    ])
}

fn zonotope(cfg: &VerifyConfig) -> Result<Vec<ClaimVerdict>> {
    let mut errs = Vec::new();
    for (i, &split) in cfg.zonotope_splits.iter().enumerate() {
        let rep = zonotope_nonidentifiability(2.0, 3.0, split, cfg.zonotope_directions, rng::derive_seed(cfg.seed, &format!("zonotope-{i}")))?;
        errs.push(if rep.multisets_differ { rep.max_discrepancy } else { f64::INFINITY });
    }
    Ok(vec![ClaimVerdict::from_errors("zonotope_nonidentifiability", &errs, 1e-12)])
}

fn generator(cfg: &VerifyConfig) -> Result<Vec<ClaimVerdict>> {
    let model = MinkowskiModel::random_anchored(6, 4, 8, 0.3, 2, rng::derive_seed(cfg.seed, "generator-model"))?;
    let data = generate_mrh_data(&model, cfg.generator_samples, 1.0, rng::derive_seed(cfg.seed, "generator-data"))?;
    let errs: Vec<f64> = data
        .codes
        .par_iter()
        .enumerate()
        .map(|(i, code)| {
            let sub = model.restrict(&code.tiles)?;
            let x = data.samples.row(i).transpose();
            Ok(minkowski_membership(&x, &sub, 1e-8, 10_000)?.distance)
        })
        .collect::<Result<_>>()?;
    Ok(vec![ClaimVerdict::from_errors("generator_samples_block_convex", &errs, 1e-8)])
}

/// Runs the requested claims and returns one verdict per claim, in a fixed order.
pub fn verify_suite(suite: Suite, cfg: &VerifyConfig) -> Result<Vec<ClaimVerdict>> {
    let selected: Vec<Suite> = if suite == Suite::All { Suite::ALL.to_vec() } else { vec![suite] };
    let mut out = Vec::new();
    for s in selected {
        out.extend(match s {
            Suite::SingleHead => single_head(cfg)?,
            Suite::MultiHead => multi_head(cfg)?,
            Suite::AffineTransport => transport(cfg)?,
            Suite::LowTemperature => low_temperature(cfg)?,
            Suite::SupportRestriction => support_restriction(cfg)?,
            Suite::SupportFunction => support_sublinear(cfg)?,
            Suite::Zonotope => zonotope(cfg)?,
            Suite::Generator => generator(cfg)?,
            Suite::All => unreachable!(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyConfig {
        VerifyConfig {
            seed: 3,
            single_head_trials: 200,
            multi_head_trials: 50,
            transport_trials: 100,
            low_temp_trials: 200,
            support_trials: 20,
            zonotope_splits: vec![0.25, 0.5],
            zonotope_directions: 200,
            generator_samples: 50,
        }
    }

    #[test]
    fn small_suite_passes() {
        let v = verify_suite(Suite::All, &small()).unwrap();
        assert_eq!(v.len(), 10);
        for c in &v {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn deterministic() {
        let cfg = small();
        assert_eq!(verify_suite(Suite::MultiHead, &cfg).unwrap(), verify_suite(Suite::MultiHead, &cfg).unwrap());
    }

    #[test]
    fn suite_names() {
        assert_eq!(Suite::parse("single-head").unwrap(), Suite::SingleHead);
        assert_eq!(Suite::parse("all").unwrap(), Suite::All);
        assert!(Suite::parse("nope").is_err());
    }
}
