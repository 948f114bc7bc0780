use std::path::PathBuf;

use cgl_core::dictionary::{r_squared, train_sae_on_rows, ArchetypalSae, SaeShape, Sparsity, TrainConfig};
use cgl_core::tensor_io::{AxtTensor, TokenLayout};
use clap::{Args, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::CliResult;
use crate::input;
use crate::run::RunDir;

#[derive(Args, Serialize)]
pub struct SaeCmd {
    #[command(subcommand)]
    action: SaeAction,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
enum SaeAction {
    /// Fit k-means centroids, then train the archetypal SAE
    Train(TrainArgs),
    /// Encode tokens with a trained model
    Encode(EncodeArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SparsityArg {
    Batch,
    Row,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// Token matrix (2-d) or activation file (3-d)
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = input::parse_layout)]
    #[serde(skip_serializing_if = "Option::is_none")]
    layout: Option<TokenLayout>,
    /// Number of concepts
    #[arg(short = 'c', long)]
    concepts: usize,
    /// Active codes per token
    #[arg(short = 'k', long)]
    k: usize,
    /// Number of k-means centroids
    #[arg(short = 'm', long)]
    centroids: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    kmeans_iters: usize,
    /// Selectivity of the initial encoder around each starting atom
    #[arg(long, default_value_t = 3.0)]
    init_sharpness: f64,
    #[arg(long, value_enum, default_value_t = SparsityArg::Batch)]
    sparsity: SparsityArg,
}

#[derive(Args, Serialize)]
struct EncodeArgs {
    /// Checkpoint directory written by `sae train`
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = input::parse_layout)]
    #[serde(skip_serializing_if = "Option::is_none")]
    layout: Option<TokenLayout>,
    /// Rows per encoding block (BatchTopK budgets are per block)
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
}

impl SaeCmd {
    pub fn action(&self) -> &'static str {
        match self.action {
            SaeAction::Train(_) => "train",
            SaeAction::Encode(_) => "encode",
        }
    }

    pub fn run(&self, run: &RunDir, seed: u64) -> CliResult<()> {
        match &self.action {
            SaeAction::Train(a) => train(a, run, seed),
            SaeAction::Encode(a) => encode(a, run),
        }
    }
}

fn train(a: &TrainArgs, run: &RunDir, seed: u64) -> CliResult<()> {
    let rows = input::rows(&a.input, a.layout)?;
    let mut shape = SaeShape::new(a.concepts, a.k, a.centroids);
    shape.kmeans_iters = a.kmeans_iters;
    shape.init_sharpness = a.init_sharpness;
    shape.sparsity = match a.sparsity {
        SparsityArg::Batch => Sparsity::BatchTopK,
        SparsityArg::Row => Sparsity::TopK,
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed,
        ..TrainConfig::default()
    };
    let fit = train_sae_on_rows(&rows, shape, &cfg)?;
    fit.sae.save(run.path("model"))?;
    run.write_axt("dictionary.axt", &AxtTensor::from_matrix(&fit.sae.dictionary()).with_name("dictionary")?)?;
    run.write_csv("trace.csv", &["epoch", "mse", "r2"], fit.trace.iter().map(|e| vec![e.epoch as f64, e.mse, e.r2]))?;
    let last = fit.trace.last().copied();
    run.write_json(
        "report.json",
        &serde_json::json!({
            "rows": rows.nrows(),
            "dim": rows.ncols(),
            "shape": shape,
            "train": cfg,
            "kmeans_inertia": fit.kmeans_inertia,
            "epochs": fit.trace.len(),
            "mse": last.map(|e| e.mse),
            "r2": last.map(|e| e.r2),
        }),
    )
}

fn encode(a: &EncodeArgs, run: &RunDir) -> CliResult<()> {
    let sae = ArchetypalSae::load(&a.model)?;
    let rows = input::rows(&a.input, a.layout)?;
    let z = sae.encode_batched(&rows, a.batch_size)?;
    let recon = sae.reconstruct(&rows, a.batch_size)?;
    run.write_axt("codes.axt", &input::sparse_to_tensor(&z).with_name("codes")?)?;
    run.write_json(
        "report.json",
        &serde_json::json!({
            "rows": z.n_rows(),
            "concepts": z.n_cols(),
            "nnz": z.nnz(),
            "mean_active": z.nnz() as f64 / z.n_rows() as f64,
            "r2": r_squared(&rows, &recon)?,
        }),
    )
}
