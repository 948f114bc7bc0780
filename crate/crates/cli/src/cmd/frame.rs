use cgl_core::frames::{grassmannian_solve, mutual_coherence, random_sphere_dict, welch_bound, FrameReport};
use cgl_core::tensor_io::AxtTensor;
use clap::{Args, Subcommand};
use serde::Serialize;

use crate::error::CliResult;
use crate::run::RunDir;

#[derive(Args, Serialize)]
pub struct FrameCmd {
    #[command(subcommand)]
    action: FrameAction,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
enum FrameAction {
    /// Approximate Grassmannian frame by alternating projection
    Solve(SolveArgs),
    /// Gaussian rows normalised to the unit sphere
    Random(RandomArgs),
}

#[derive(Args, Serialize)]
struct SolveArgs {
    #[arg(short = 'c', long)]
    c: usize,
    #[arg(short = 'd', long)]
    d: usize,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
}

#[derive(Args, Serialize)]
struct RandomArgs {
    #[arg(short = 'c', long)]
    c: usize,
    #[arg(short = 'd', long)]
    d: usize,
}

impl FrameCmd {
    pub fn action(&self) -> &'static str {
        match self.action {
            FrameAction::Solve(_) => "solve",
            FrameAction::Random(_) => "random",
        }
    }

    pub fn run(&self, run: &RunDir, seed: u64) -> CliResult<()> {
        let (dict, report) = match &self.action {
            FrameAction::Solve(a) => grassmannian_solve(a.c, a.d, a.iters, seed)?,
            FrameAction::Random(a) => {
                let dict = random_sphere_dict(a.c, a.d, seed);
                let report = FrameReport {
                    c: a.c,
                    d: a.d,
                    coherence: mutual_coherence(&dict)?,
                    welch_bound: welch_bound(a.c, a.d).0,
                    iterations: 0,
                    converged: false,
                };
                (dict, report)
            }
        };
        run.write_axt("dictionary.axt", &AxtTensor::from_matrix(&dict).with_name("frame")?)?;
        let (_, trivial) = welch_bound(report.c, report.d);
        run.write_json(
            "report.json",
            &serde_json::json!({ "frame": report, "welch_trivial": trivial }),
        )
    }
}
