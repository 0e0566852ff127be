//! `rabifit`: simulate cavity-spin reflection maps and fit coupling
//! parameters out of them. All run settings live in a TOML config; the
//! command line only picks the action, the output directory, and an
//! optional seed override.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rabifit_cli::commands::{self, CommandKind, RunContext};
use rabifit_cli::CliError;

#[derive(Parser)]
#[command(name = "rabifit", version, about = "Cavity-spin reflection spectrum workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    /// Noise seed, overriding the config's `[noise] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress normal output; errors still print to stderr.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a reflection map and write it with its truth sidecar.
    Simulate,
    /// Fit the dispersive dip-frequency pull of a weakly coupled map.
    FitDispersive,
    /// Fit the field-swept linewidth broadening of a map.
    FitKappa,
    /// Fit the two normal-mode branches of a strongly coupled map.
    FitBranches,
    /// Fit the full reflection model to every pixel of a map.
    FitMap,
    /// Locate the coupling where the reflection dip splits in two.
    ThresholdScan,
    /// Regress collective couplings against polarized spin count.
    Nscale,
    /// Fit the standing-wave coupling profile along the cavity axis.
    Position,
}

impl Command {
    fn kind(&self) -> CommandKind {
        match self {
            Command::Simulate => CommandKind::Simulate,
            Command::FitDispersive => CommandKind::FitDispersive,
            Command::FitKappa => CommandKind::FitKappa,
            Command::FitBranches => CommandKind::FitBranches,
            Command::FitMap => CommandKind::FitMap,
            Command::ThresholdScan => CommandKind::ThresholdScan,
            Command::Nscale => CommandKind::Nscale,
            Command::Position => CommandKind::Position,
        }
    }
}

fn run(cli: Cli) -> rabifit_cli::Result<()> {
    let kind = cli.command.kind();
    let Some(config) = cli.config else {
        return Err(CliError::Config("--config PATH is required".into()));
    };
    let ctx = RunContext::new(&config, cli.out, cli.seed, cli.quiet)?;
    commands::run(kind, &ctx)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("rabifit: {err}");
            err.exit_code()
        }
    }
}
