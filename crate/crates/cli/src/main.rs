//! `promptevo` command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "promptevo", version, about = "Evolve, transfer and analyze system prompts")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable. See the key list below.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "promptevo-out")]
    pub out: PathBuf,
    /// Shorthand for `--set optimization.rng_seed=N`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the optimizer and write the run log and prompt files.
    Optimize {
        /// Continue the run log in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score one prompt on every dataset instance.
    Evaluate {
        /// Prompt text file; defaults to the configured seed prompt.
        #[arg(long, value_name = "PATH")]
        prompt: Option<PathBuf>,
        /// Profile to evaluate with; defaults to the optimizer profile.
        #[arg(long, value_name = "NAME")]
        profile: Option<String>,
    },
    /// Evaluate the four prompts on every transfer profile and tabulate.
    Transfer {
        /// Exit non-zero when any cell is incomplete.
        #[arg(long)]
        strict: bool,
    },
    /// Length or embedding analysis of a run log.
    Analyze {
        #[arg(value_enum)]
        kind: AnalysisKind,
        /// Run log to analyze. Optional for `embedding` when `--trace` is given.
        log: Option<PathBuf>,
        /// Precomputed embedding trace (JSON) instead of embedding the log.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
    },
    /// Render a table from saved transfer cells.
    Report {
        /// Cells file written by `transfer`.
        cells: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Exit non-zero when any cell is incomplete.
        #[arg(long)]
        strict: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalysisKind {
    Length,
    Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Latex,
}

/// Failure classes and their exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad invocation or configuration: exit 2.
    Usage(String),
    /// Anything that went wrong while running: exit 1.
    Runtime(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let command = Cli::command()
        .after_help("Run with --help for the configuration override keys.")
        .after_long_help(promptevo::config::override_help());
    let cli = match command.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            // clap exits 0 for --help/--version and 2 for usage errors.
            e.exit();
        }
    };
    let level = match cli.common.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("PROMPTEVO_LOG").init();

    let result = match cli.command {
        Command::Optimize { resume } => commands::optimize(&cli.common, resume),
        Command::Evaluate { prompt, profile } => commands::evaluate(&cli.common, prompt.as_deref(), profile.as_deref()),
        Command::Transfer { strict } => commands::transfer(&cli.common, strict),
        Command::Analyze { kind, log, trace } => commands::analyze(&cli.common, kind, log.as_deref(), trace.as_deref()),
        Command::Report { cells, format, strict } => commands::report(&cells, format, strict),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.exit_code())
        }
    }
}
