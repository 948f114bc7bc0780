use std::path::PathBuf;

use cgl_core::geometry::{geometry_report, pca2d, HistogramConfig};
use clap::{Args, Subcommand};
use serde::Serialize;

use crate::error::CliResult;
use crate::input;
use crate::run::RunDir;

#[derive(Args, Serialize)]
pub struct GeometryCmd {
    #[command(subcommand)]
    action: GeometryAction,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
enum GeometryAction {
    /// Inner products, spectrum, sparsity, antipodal pairs and a 2-d projection
    Report(ReportArgs),
}

#[derive(Args, Serialize)]
struct ReportArgs {
    /// Dictionary, one atom per row
    #[arg(long)]
    dict: PathBuf,
    /// Codes (rows × concepts) for the geometry/usage correlation
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    codes: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    bins: usize,
    /// Above this many atoms the histogram uses sampled pairs
    #[arg(long, default_value_t = 2000)]
    exact_threshold: usize,
    #[arg(long, default_value_t = 1_000_000)]
    sample_pairs: usize,
    /// Pairs with cosine ≤ −1 + eps are reported as antipodal
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
}

impl GeometryCmd {
    pub fn action(&self) -> &'static str {
        "report"
    }

    pub fn run(&self, run: &RunDir, seed: u64) -> CliResult<()> {
        let GeometryAction::Report(a) = &self.action;
        let dict = input::matrix(&a.dict)?;
        let codes = a.codes.as_deref().map(input::codes).transpose()?;
        let hist = HistogramConfig {
            bins: a.bins,
            exact_threshold: a.exact_threshold,
            sample_pairs: a.sample_pairs,
            seed,
        };
        let rep = geometry_report(&dict, codes.as_ref(), &hist, a.eps)?;
        let h = &rep.inner_product_histogram;
        run.write_csv(
            "inner_products.csv",
            &["lo", "hi", "count"],
            h.counts.iter().enumerate().map(|(i, &c)| vec![h.edges[i], h.edges[i + 1], c as f64]),
        )?;
        run.write_csv("singular_values.csv", &["index", "value"], rep.singular_values.iter().enumerate().map(|(i, &s)| vec![i as f64, s]))?;
        run.write_csv("hoyer.csv", &["concept", "hoyer"], rep.hoyer_scores.iter().enumerate().map(|(i, &s)| vec![i as f64, s]))?;
        run.write_csv(
            "antipodal.csv",
            &["i", "j", "cosine"],
            rep.antipodal_pairs.iter().map(|p| vec![p.i as f64, p.j as f64, p.cosine]),
        )?;
        let xy = pca2d(&dict)?;
        run.write_csv("pca2d.csv", &["concept", "x", "y"], (0..xy.nrows()).map(|i| vec![i as f64, xy[(i, 0)], xy[(i, 1)]]))?;
        run.write_json("report.json", &rep)
    }
}
