use std::path::PathBuf;

use cgl_core::mrh::{
    circle_tokens, generate_mrh_data, geodesic_experiment, verify_suite, DistanceMetric, GeodesicConfig,
    MinkowskiModel, PairSelection, Suite, VerifyConfig,
};
use cgl_core::tensor_io::AxtTensor;
use clap::{Args, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::input;
use crate::run::RunDir;

#[derive(Args, Serialize)]
pub struct MrhCmd {
    #[command(subcommand)]
    action: MrhAction,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
enum MrhAction {
    /// Monte-Carlo check of the attention-geometry lemmas (exit 2 if any claim fails)
    Verify(VerifyArgs),
    /// Sample points from a random Minkowski sum of tiles
    Gen(GenArgs),
    /// Distance to the data along straight vs graph-geodesic interpolants
    Geodesic(GeodesicArgs),
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    Suite::parse(s).map_err(|e| e.to_string())
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    /// all, single-head, multi-head, affine-transport, low-temperature,
    /// support-restriction, support-function, zonotope or generator
    #[arg(long, value_parser = parse_suite, default_value = "all")]
    suite: Suite,
    /// Override the trial count of every randomized claim
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    trials: Option<usize>,
}

#[derive(Args, Serialize)]
struct GenArgs {
    #[arg(long, default_value_t = 8)]
    tiles: usize,
    #[arg(long, default_value_t = 8)]
    per_tile: usize,
    #[arg(long, default_value_t = 64)]
    d: usize,
    /// Archetype spread around each tile anchor
    #[arg(long, default_value_t = 0.1)]
    spread: f64,
    /// Tiles active per sample
    #[arg(long, default_value_t = 3)]
    n_active: usize,
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    /// Dirichlet concentration within each tile
    #[arg(long, default_value_t = 1.0)]
    concentration: f64,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MetricArg {
    Cosine,
    Euclidean,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SelectionArg {
    Random,
    Farthest,
}

#[derive(Args, Serialize)]
struct GeodesicArgs {
    /// Token matrix (2-d) or activation file (3-d)
    #[arg(long, required_unless_present = "circle", conflicts_with = "circle")]
    #[serde(skip_serializing_if = "Option::is_none")]
    tokens: Option<PathBuf>,
    /// Use N tokens on a circle instead of an input file
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    circle: Option<usize>,
    /// Ambient dimension of the circle
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Offset of the circle from the origin
    #[arg(long, default_value_t = 1.0)]
    offset: f64,
    #[arg(short = 'k', long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 50)]
    pairs: usize,
    #[arg(long, default_value_t = 21)]
    steps: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::Cosine)]
    metric: MetricArg,
    #[arg(long, value_enum, default_value_t = SelectionArg::Random)]
    selection: SelectionArg,
}

impl MrhCmd {
    pub fn action(&self) -> &'static str {
        match self.action {
            MrhAction::Verify(_) => "verify",
            MrhAction::Gen(_) => "gen",
            MrhAction::Geodesic(_) => "geodesic",
        }
    }

    pub fn run(&self, run: &RunDir, seed: u64) -> CliResult<()> {
        match &self.action {
            MrhAction::Verify(a) => verify(a, run, seed),
            MrhAction::Gen(a) => gen(a, run, seed),
            MrhAction::Geodesic(a) => geodesic(a, run, seed),
        }
    }
}

fn verify(a: &VerifyArgs, run: &RunDir, seed: u64) -> CliResult<()> {
    let mut cfg = VerifyConfig { seed, ..VerifyConfig::default() };
    if let Some(n) = a.trials {
        if n == 0 {
            return Err(CliError::invalid("--trials must be at least 1"));
        }
        cfg.single_head_trials = n;
        cfg.multi_head_trials = n;
        cfg.transport_trials = n;
        cfg.low_temp_trials = n;
        cfg.support_trials = n;
        cfg.zonotope_directions = n;
        cfg.generator_samples = n;
    }
    let claims = verify_suite(a.suite, &cfg)?;
    let passed = claims.iter().all(|c| c.passed);
    run.write_csv(
        "claims.csv",
        &["claim", "trials", "worst", "threshold", "failures", "passed"],
        claims.iter().map(|c| {
            vec![
                c.claim.clone(),
                c.trials.to_string(),
                c.worst.to_string(),
                c.threshold.to_string(),
                c.failures.to_string(),
                c.passed.to_string(),
            ]
        }),
    )?;
    run.write_json("report.json", &serde_json::json!({ "suite": a.suite, "config": cfg, "passed": passed, "claims": claims }))?;
    if passed {
        Ok(())
    } else {
        let failed: Vec<&str> = claims.iter().filter(|c| !c.passed).map(|c| c.claim.as_str()).collect();
        Err(CliError::numeric(format!("claims failed: {}", failed.join(", "))))
    }
}

fn gen(a: &GenArgs, run: &RunDir, seed: u64) -> CliResult<()> {
    let model = MinkowskiModel::random_anchored(a.tiles, a.per_tile, a.d, a.spread, a.n_active, seed)?;
    let data = generate_mrh_data(&model, a.n, a.concentration, seed)?;
    let total = model.total_archetypes();
    let mut codes = DMatrix::zeros(a.n, total);
    for (i, c) in data.codes.iter().enumerate() {
        codes.row_mut(i).copy_from(&c.to_dense(&model).transpose());
    }
    run.write_axt("samples.axt", &AxtTensor::from_matrix(&data.samples).with_name("samples")?)?;
    run.write_axt("codes.axt", &AxtTensor::from_matrix(&codes).with_name("codes")?)?;
    run.write_axt("archetypes.axt", &AxtTensor::from_matrix(&model.stacked_archetypes()).with_name("archetypes")?)?;
    run.write_json(
        "report.json",
        &serde_json::json!({
            "samples": a.n,
            "dim": model.dim(),
            "tiles": a.tiles,
            "archetypes": total,
            "n_active": model.n_active(),
        }),
    )
}

fn geodesic(a: &GeodesicArgs, run: &RunDir, seed: u64) -> CliResult<()> {
    let tokens = match (&a.tokens, a.circle) {
        (Some(p), _) => input::rows(p, None)?,
        (None, Some(n)) => {
            if n < 3 || a.dim < 2 {
                return Err(CliError::invalid("--circle needs at least 3 tokens and --dim at least 2"));
            }
            circle_tokens(n, a.dim, a.offset)
        }
        (None, None) => return Err(CliError::invalid("one of --tokens or --circle is required")),
    };
    let cfg = GeodesicConfig {
        k_nn: a.k,
        pair_count: a.pairs,
        steps: a.steps,
        seed,
        metric: match a.metric {
            MetricArg::Cosine => DistanceMetric::Cosine,
            MetricArg::Euclidean => DistanceMetric::Euclidean,
        },
        selection: match a.selection {
            SelectionArg::Random => PairSelection::Random,
            SelectionArg::Farthest => PairSelection::Farthest,
        },
    };
    let curves = geodesic_experiment(&tokens, &cfg)?;
    run.write_csv(
        "curves.csv",
        &["t", "linear", "geodesic"],
        curves.t.iter().zip(&curves.linear).zip(&curves.geodesic).map(|((&t, &l), &g)| vec![t, l, g]),
    )?;
    run.write_json("report.json", &serde_json::json!({ "tokens": tokens.nrows(), "dim": tokens.ncols(), "curves": curves }))
}
