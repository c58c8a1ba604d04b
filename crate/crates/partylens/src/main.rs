// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use partylens::pipeline::{Logger, Run, Stage};
use partylens::{CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "partylens",
    version,
    about = "Latent party preferences in transformer value vectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Recompute stages even when their outputs are current.
    #[arg(long, global = true)]
    force: bool,
    /// Log progress as JSON lines on stderr.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    GenCorpus,
    GenToyModel,
    Record,
    TrainProbe,
    Extract,
    Personas,
    Scan,
    Analyze,
    Sensitivity,
    Regress,
    Report,
    /// Every stage in order.
    RunAll,
}

fn stage(c: Command) -> Option<Stage> {
    Some(match c {
        Command::GenCorpus => Stage::GenCorpus,
        Command::GenToyModel => Stage::GenToyModel,
        Command::Record => Stage::Record,
        Command::TrainProbe => Stage::TrainProbe,
        Command::Extract => Stage::Extract,
        Command::Personas => Stage::Personas,
        Command::Scan => Stage::Scan,
        Command::Analyze => Stage::Analyze,
        Command::Sensitivity => Stage::Sensitivity,
        Command::Regress => Stage::Regress,
        Command::Report => Stage::Report,
        Command::RunAll => return None,
    })
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.common.out {
        cfg.out_dir = o.clone();
    }
    let log = Logger {
        json: cli.common.json,
        quiet: false,
    };
    let run = Run::new(cfg, cli.common.force, log)?;
    match stage(cli.command) {
        Some(s) => run.execute(s).map(|_| ()),
        None => run.run_all(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.common.json;
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if json {
                eprintln!(
                    "{}",
                    serde_json::json!({ "event": "error", "detail": e.to_string(), "code": e.exit_code() })
                );
            } else {
                eprintln!("error: {e}");
            }
            e.into()
        }
    }
}
