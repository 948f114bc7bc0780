use std::path::PathBuf;

use cgl_core::tensor_io::{flatten_tokens, ActivationSet, AxtTensor, Dtype, TokenLayout};
use clap::{Args, Subcommand};
use serde::Serialize;

use crate::error::CliResult;
use crate::input;
use crate::run::RunDir;

#[derive(Args, Serialize)]
pub struct IoCmd {
    #[command(subcommand)]
    action: IoAction,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
enum IoAction {
    /// Header, shape and value summary of an AXT file
    Inspect(InspectArgs),
    /// Flatten a 3-d activation file to an (n·t)×d token matrix
    Flatten(FlattenArgs),
}

#[derive(Args, Serialize)]
struct InspectArgs {
    input: PathBuf,
}

#[derive(Args, Serialize)]
struct FlattenArgs {
    input: PathBuf,
    /// CLS,REG,PATCH token counts (default: sidecar, else patches only)
    #[arg(long, value_parser = input::parse_layout)]
    #[serde(skip_serializing_if = "Option::is_none")]
    layout: Option<TokenLayout>,
}

#[derive(Serialize)]
struct InspectReport {
    path: String,
    dtype: &'static str,
    dims: Vec<u64>,
    name: Option<String>,
    values: usize,
    finite: usize,
    min: Option<f64>,
    max: Option<f64>,
    mean: Option<f64>,
    sidecar: Option<serde_json::Value>,
}

fn summarize(path: &std::path::Path, t: &AxtTensor) -> InspectReport {
    let v = t.to_f64_vec();
    let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    let (min, max, mean) = if finite.is_empty() {
        (None, None, None)
    } else {
        (
            Some(finite.iter().copied().fold(f64::INFINITY, f64::min)),
            Some(finite.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            Some(finite.iter().sum::<f64>() / finite.len() as f64),
        )
    };
    let sidecar = std::fs::read_to_string(ActivationSet::sidecar_path(path))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok());
    InspectReport {
        path: path.display().to_string(),
        dtype: match t.dtype() {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        },
        dims: t.dims().to_vec(),
        name: t.name().map(str::to_string),
        values: v.len(),
        finite: finite.len(),
        min,
        max,
        mean,
        sidecar,
    }
}

impl IoCmd {
    pub fn action(&self) -> &'static str {
        match self.action {
            IoAction::Inspect(_) => "inspect",
            IoAction::Flatten(_) => "flatten",
        }
    }

    pub fn run(&self, run: &RunDir) -> CliResult<()> {
        match &self.action {
            IoAction::Inspect(a) => {
                let t = input::tensor(&a.input)?;
                run.write_json("report.json", &summarize(&a.input, &t))
            }
            IoAction::Flatten(a) => {
                let set = input::activations(&a.input, a.layout)?;
                let rows = flatten_tokens(&set);
                run.write_axt("tokens.axt", &AxtTensor::from_matrix(&rows).with_name("tokens")?)?;
                run.write_json(
                    "report.json",
                    &serde_json::json!({
                        "rows": rows.nrows(),
                        "dim": rows.ncols(),
                        "images": set.n_images(),
                        "tokens_per_image": set.n_tokens(),
                        "layout": set.layout(),
                    }),
                )
            }
        }
    }
}
