//! `cgl`: run the concept-geometry pipelines from the command line.
//!
//! Every invocation writes one run directory holding `config.json` (the
//! resolved configuration, seed included), `report.json` and any CSV / AXT
//! outputs. Exit status is 0 on success, 1 for invalid input or arguments
//! and 2 for numeric failures.

mod cmd;
mod error;
mod input;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use error::{CliError, CliResult, EXIT_INVALID};
use run::{RunDir, FORMAT_VERSION};

#[derive(Parser)]
#[command(name = "cgl", version, about = "Concept geometry lab: dictionaries, archetypes and attention geometry")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run directory to create; must not exist. Defaults to runs/<command>-<action>-s<seed>-<time>.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, global = true, env = "CGL_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect and convert AXT tensors
    Io(cmd::io::IoCmd),
    /// Train and apply the archetypal sparse autoencoder
    Sae(cmd::sae::SaeCmd),
    /// Classical archetypal analysis
    Aa(cmd::aa::AaCmd),
    /// Reference frames and coherence
    Frame(cmd::frame::FrameCmd),
    /// Geometry diagnostics of a dictionary
    Geometry(cmd::geometry::GeometryCmd),
    /// Co-activation statistics of codes
    Stats(cmd::stats::StatsCmd),
    /// Concept importance for linear probes
    Align(cmd::align::AlignCmd),
    /// Token footprints, positional decoding and PCA maps
    Tokens(cmd::tokens::TokensCmd),
    /// Attention polytopes and Minkowski-sum experiments
    Mrh(cmd::mrh::MrhCmd),
}

impl Command {
    fn name(&self) -> (&'static str, &'static str) {
        match self {
            Command::Io(c) => ("io", c.action()),
            Command::Sae(c) => ("sae", c.action()),
            Command::Aa(c) => ("aa", c.action()),
            Command::Frame(c) => ("frame", c.action()),
            Command::Geometry(c) => ("geometry", c.action()),
            Command::Stats(c) => ("stats", c.action()),
            Command::Align(c) => ("align", c.action()),
            Command::Tokens(c) => ("tokens", c.action()),
            Command::Mrh(c) => ("mrh", c.action()),
        }
    }

    fn args_json(&self) -> serde_json::Value {
        let v = match self {
            Command::Io(c) => serde_json::to_value(c),
            Command::Sae(c) => serde_json::to_value(c),
            Command::Aa(c) => serde_json::to_value(c),
            Command::Frame(c) => serde_json::to_value(c),
            Command::Geometry(c) => serde_json::to_value(c),
            Command::Stats(c) => serde_json::to_value(c),
            Command::Align(c) => serde_json::to_value(c),
            Command::Tokens(c) => serde_json::to_value(c),
            Command::Mrh(c) => serde_json::to_value(c),
        };
        v.unwrap_or(serde_json::Value::Null)
    }

    fn execute(&self, run: &RunDir, seed: u64) -> CliResult<()> {
        match self {
            Command::Io(c) => c.run(run),
            Command::Sae(c) => c.run(run, seed),
            Command::Aa(c) => c.run(run, seed),
            Command::Frame(c) => c.run(run, seed),
            Command::Geometry(c) => c.run(run, seed),
            Command::Stats(c) => c.run(run, seed),
            Command::Align(c) => c.run(run, seed),
            Command::Tokens(c) => c.run(run, seed),
            Command::Mrh(c) => c.run(run, seed),
        }
    }
}

#[derive(Serialize)]
struct RunConfig {
    format: &'static str,
    version: &'static str,
    command: String,
    seed: u64,
    threads: usize,
    args: serde_json::Value,
}

fn default_out(command: &str, action: &str, seed: u64) -> PathBuf {
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
    PathBuf::from("runs").join(format!("{command}-{action}-s{seed}-{stamp}"))
}

fn main_inner(cli: Cli) -> CliResult<PathBuf> {
    let threads = match cli.global.threads {
        Some(0) => return Err(CliError::invalid("--threads must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::invalid(format!("thread pool: {e}")))?;

    let (command, action) = cli.command.name();
    let target = cli
        .global
        .out
        .clone()
        .unwrap_or_else(|| default_out(command, action, cli.global.seed));
    let run = RunDir::create(&target)?;
    run.write_json(
        "config.json",
        &RunConfig {
            format: FORMAT_VERSION,
            version: env!("CARGO_PKG_VERSION"),
            command: format!("{command} {action}"),
            seed: cli.global.seed,
            threads,
            args: cli.command.args_json(),
        },
    )?;
    cli.command.execute(&run, cli.global.seed)?;
    run.finish()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match main_inner(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
