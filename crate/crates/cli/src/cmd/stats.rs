use std::path::PathBuf;

use cgl_core::stats::{stats_report, GramNormalization};
use clap::{Args, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::CliResult;
use crate::input;
use crate::run::RunDir;

#[derive(Args, Serialize)]
pub struct StatsCmd {
    #[command(subcommand)]
    action: StatsAction,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
enum StatsAction {
    /// Occurrence counts, co-activation spectrum, baselines and block structure
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum NormArg {
    Raw,
    Correlation,
}

#[derive(Args, Serialize)]
struct ReportArgs {
    /// Codes (rows × concepts)
    #[arg(long)]
    codes: PathBuf,
    #[arg(long, value_enum, default_value_t = NormArg::Correlation)]
    normalization: NormArg,
    /// Also compute the random and shuffled baselines
    #[arg(long)]
    baselines: bool,
    /// Spectral block reordering into this many clusters
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    blocks: Option<usize>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl StatsCmd {
    pub fn action(&self) -> &'static str {
        "report"
    }

    pub fn run(&self, run: &RunDir, seed: u64) -> CliResult<()> {
        let StatsAction::Report(a) = &self.action;
        let z = input::codes(&a.codes)?;
        let norm = match a.normalization {
            NormArg::Raw => GramNormalization::Raw,
            NormArg::Correlation => GramNormalization::Correlation,
        };
        let rep = stats_report(&z, norm, a.baselines, a.blocks, seed)?;
        run.write_csv(
            "spectrum.csv",
            &["index", "observed", "random", "shuffled"],
            rep.spectrum.iter().enumerate().map(|(i, &s)| {
                vec![
                    i.to_string(),
                    s.to_string(),
                    cell(rep.random_spectrum.as_ref().map(|r| r[i])),
                    cell(rep.shuffled_spectrum.as_ref().map(|r| r[i])),
                ]
            }),
        )?;
        let occ = &rep.occurrence;
        run.write_csv(
            "occurrence.csv",
            &["concept", "firing_count", "conditional_energy", "dense"],
            (0..occ.firing_count.len()).map(|i| {
                vec![
                    i.to_string(),
                    occ.firing_count[i].to_string(),
                    cell(occ.conditional_energy[i]),
                    occ.dense_flags[i].to_string(),
                ]
            }),
        )?;
        if let Some(b) = &rep.blocks {
            run.write_csv(
                "blocks.csv",
                &["position", "concept", "label"],
                b.permutation.iter().enumerate().map(|(k, &c)| vec![k, c, b.labels[c]]),
            )?;
        }
        run.write_json("report.json", &rep)
    }
}
