use std::path::PathBuf;

use cgl_core::alignment::{fit_linear_probe, importance, task_subspace_report, top_concepts, OutputSelect, ProbeWeights, RankBy};
use cgl_core::tensor_io::AxtTensor;
use clap::{Args, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::input;
use crate::run::RunDir;

#[derive(Args, Serialize)]
pub struct AlignCmd {
    #[command(subcommand)]
    action: AlignAction,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
enum AlignAction {
    /// Expected activation times probe alignment, per concept and output
    Importance(ImportanceArgs),
    /// Pairwise alignment and spectrum of a concept subset against a random one
    Subspace(SubspaceArgs),
    /// Ridge least-squares probe (for synthetic data)
    FitProbe(FitProbeArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum RankArg {
    Magnitude,
    Signed,
}

#[derive(Args, Serialize)]
struct ImportanceArgs {
    #[arg(long)]
    codes: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    /// Probe weights, outputs × d
    #[arg(long)]
    probe: PathBuf,
    /// Probe bias, one per output (default zero)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    probe_bias: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    top_k: usize,
    /// Rank for this output only (default: per-concept maximum over outputs)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<usize>,
    #[arg(long, value_enum, default_value_t = RankArg::Magnitude)]
    rank: RankArg,
}

#[derive(Args, Serialize)]
struct SubspaceArgs {
    #[arg(long)]
    dict: PathBuf,
    /// Concept indices, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    indices: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

#[derive(Args, Serialize)]
struct FitProbeArgs {
    /// Inputs, rows × d
    #[arg(long)]
    x: PathBuf,
    /// Targets, rows × outputs
    #[arg(long)]
    y: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    ridge: f64,
    #[arg(long, default_value = "probe")]
    task: String,
}

fn load_probe(weights: &std::path::Path, bias: Option<&std::path::Path>) -> CliResult<ProbeWeights> {
    let w = input::tensor(weights)?;
    let name = w.name().unwrap_or("probe").to_string();
    let w = w.to_matrix()?;
    let b = match bias {
        Some(p) => input::tensor(p)?.to_vector()?,
        None => DVector::zeros(w.nrows()),
    };
    Ok(ProbeWeights::new(w, b, name)?)
}

impl AlignCmd {
    pub fn action(&self) -> &'static str {
        match self.action {
            AlignAction::Importance(_) => "importance",
            AlignAction::Subspace(_) => "subspace",
            AlignAction::FitProbe(_) => "fit-probe",
        }
    }

    pub fn run(&self, run: &RunDir, seed: u64) -> CliResult<()> {
        match &self.action {
            AlignAction::Importance(a) => {
                let z = input::codes(&a.codes)?;
                let dict = input::matrix(&a.dict)?;
                let probe = load_probe(&a.probe, a.probe_bias.as_deref())?;
                let table = importance(&z, &dict, &probe)?;
                let select = match a.output {
                    Some(j) => OutputSelect::Output(j),
                    None => OutputSelect::AggregateMax,
                };
                let rank = match a.rank {
                    RankArg::Magnitude => RankBy::Magnitude,
                    RankArg::Signed => RankBy::Signed,
                };
                let top = top_concepts(&table, select, a.top_k, rank)?;
                let (c, o) = table.scores.shape();
                run.write_csv(
                    "importance.csv",
                    &["concept", "output", "score"],
                    (0..c).flat_map(|i| (0..o).map(move |j| (i, j))).map(|(i, j)| {
                        vec![i.to_string(), j.to_string(), table.scores[(i, j)].to_string()]
                    }),
                )?;
                run.write_json(
                    "report.json",
                    &serde_json::json!({
                        "task": probe.task_name,
                        "concepts": c,
                        "outputs": o,
                        "select": select,
                        "rank": rank,
                        "top": top,
                        "mean_codes": table.mean_codes.as_slice(),
                    }),
                )
            }
            AlignAction::Subspace(a) => {
                let dict = input::matrix(&a.dict)?;
                let rep = task_subspace_report(&dict, &a.indices, a.bins, seed)?;
                let edge = |k: usize| k as f64 / a.bins as f64;
                run.write_csv(
                    "abs_cosine.csv",
                    &["lo", "hi", "subset", "reference"],
                    (0..a.bins).map(|k| {
                        vec![
                            edge(k),
                            edge(k + 1),
                            rep.subset.abs_cosine_counts[k] as f64,
                            rep.reference.abs_cosine_counts[k] as f64,
                        ]
                    }),
                )?;
                run.write_json("report.json", &rep)
            }
            AlignAction::FitProbe(a) => {
                let x = input::matrix(&a.x)?;
                let y = input::matrix(&a.y)?;
                if x.nrows() != y.nrows() {
                    return Err(CliError::invalid(format!("x has {} rows, y has {}", x.nrows(), y.nrows())));
                }
                let probe = fit_linear_probe(&x, &y, a.ridge, &a.task)?;
                run.write_axt("probe_weights.axt", &AxtTensor::from_matrix(&probe.weights).with_name(a.task.as_str())?)?;
                run.write_axt("probe_bias.axt", &AxtTensor::from_vector(&probe.bias).with_name(format!("{}_bias", a.task))?)?;
                let mut pred = &x * probe.weights.transpose();
                for mut row in pred.row_iter_mut() {
                    row += probe.bias.transpose();
                }
                let mse = (pred - &y).norm_squared() / y.len() as f64;
                run.write_json(
                    "report.json",
                    &serde_json::json!({ "task": a.task, "rows": x.nrows(), "dim": x.ncols(), "outputs": y.ncols(), "ridge": a.ridge, "train_mse": mse }),
                )
            }
        }
    }
}
