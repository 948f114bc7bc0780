use std::path::PathBuf;

use cgl_core::archetypal::{aa_vs_sae_curve, fit_aa, AaConfig, CurveProtocol};
use cgl_core::dictionary::ArchetypalSae;
use cgl_core::tensor_io::{ActivationSet, AxtTensor, TokenLayout};
use clap::{Args, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::input;
use crate::run::RunDir;

#[derive(Args, Serialize)]
pub struct AaCmd {
    #[command(subcommand)]
    action: AaAction,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
enum AaAction {
    /// Fit p archetypes to the rows of a matrix
    Fit(FitArgs),
    /// Relative AA error against p, next to a fixed SAE's error
    Curve(CurveArgs),
}

#[derive(Args, Serialize)]
struct Solver {
    #[arg(long, default_value_t = 200)]
    iters: usize,
    /// Stop when the relative error improves by less than this
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
}

impl Solver {
    fn config(&self, seed: u64) -> AaConfig {
        AaConfig {
            iters: self.iters,
            tol: self.tol,
            seed,
            ..AaConfig::default()
        }
    }
}

#[derive(Args, Serialize)]
struct FitArgs {
    /// Token matrix (2-d) or activation file (3-d)
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = input::parse_layout)]
    #[serde(skip_serializing_if = "Option::is_none")]
    layout: Option<TokenLayout>,
    #[arg(short = 'p', long)]
    p: usize,
    #[command(flatten)]
    solver: Solver,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ProtocolArg {
    Pooled,
    PerImage,
}

#[derive(Args, Serialize)]
struct CurveArgs {
    /// Activation file (3-d)
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = input::parse_layout)]
    #[serde(skip_serializing_if = "Option::is_none")]
    layout: Option<TokenLayout>,
    /// Increasing archetype counts, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    p: Vec<usize>,
    /// SAE checkpoint to compare against
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sae: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ProtocolArg::PerImage)]
    protocol: ProtocolArg,
    #[command(flatten)]
    solver: Solver,
}

impl AaCmd {
    pub fn action(&self) -> &'static str {
        match self.action {
            AaAction::Fit(_) => "fit",
            AaAction::Curve(_) => "curve",
        }
    }

    pub fn run(&self, run: &RunDir, seed: u64) -> CliResult<()> {
        match &self.action {
            AaAction::Fit(a) => {
                let x = input::rows(&a.input, a.layout)?;
                let fit = fit_aa(&x, a.p, &a.solver.config(seed))?;
                fit.model.save(run.path("model"))?;
                run.write_axt("archetypes.axt", &AxtTensor::from_matrix(fit.model.archetypes()).with_name("archetypes")?)?;
                run.write_csv("trace.csv", &["iteration", "relative_error"], fit.trace.iter().enumerate().map(|(i, e)| vec![i as f64, *e]))?;
                run.write_json(
                    "report.json",
                    &serde_json::json!({
                        "rows": x.nrows(),
                        "dim": x.ncols(),
                        "p": a.p,
                        "iterations": fit.trace.len() - 1,
                        "relative_error": fit.relative_error(),
                    }),
                )
            }
            AaAction::Curve(a) => {
                let t = input::tensor(&a.input)?;
                if t.ndim() != 3 {
                    return Err(CliError::invalid(format!("{}: aa curve needs a 3-d activation file", a.input.display())));
                }
                let set: ActivationSet = input::activations(&a.input, a.layout)?;
                let sae = a.sae.as_ref().map(ArchetypalSae::load).transpose()?;
                let protocol = match a.protocol {
                    ProtocolArg::Pooled => CurveProtocol::Pooled,
                    ProtocolArg::PerImage => CurveProtocol::PerImage,
                };
                let rows = aa_vs_sae_curve(&set, &a.p, sae.as_ref(), protocol, &a.solver.config(seed))?;
                run.write_csv(
                    "curve.csv",
                    &["p", "aa_error", "sae_error"],
                    rows.iter()
                        .map(|r| vec![r.p.to_string(), r.aa_error.to_string(), r.sae_error.map(|e| e.to_string()).unwrap_or_default()]),
                )?;
                run.write_json("report.json", &serde_json::json!({ "protocol": protocol, "curve": rows }))
            }
        }
    }
}
