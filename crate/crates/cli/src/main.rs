mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use figp_inverse::{Error, Fidelity};

use crate::config::RunConfig;

/// Functional-input emulation and Bayesian inversion.
#[derive(Debug, Parser)]
#[command(name = "figinv", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; every field has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the configured fidelity mode.
    #[arg(long, global = true, value_parser = parse_fidelity)]
    fidelity: Option<Fidelity>,

    /// Drop the log-scale Jacobian from the σ² and η acceptance ratios.
    #[arg(long, global = true)]
    paper_literal_mh: bool,

    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,

    /// Worker threads for the parallel loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic benchmark: training data, observation and truth.
    Generate,
    /// Fit the emulator and write the model file and selection report.
    Fit,
    /// Sample the posterior of the functional input given the observation.
    Invert,
    /// Score the posterior fields against the truth file.
    Evaluate,
}

fn parse_fidelity(s: &str) -> Result<Fidelity, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numeric(_) | Error::Fit(_) => 4,
        Error::Argument(_)
        | Error::Data(_)
        | Error::Parse { .. }
        | Error::Eval { .. }
        | Error::Io(_)
        | Error::Json(_) => 3,
    }
}

fn run(cli: Cli) -> figp_inverse::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(f) = cli.fidelity {
        cfg.fit.fidelity = f;
    }
    if cli.paper_literal_mh {
        cfg.mcmc.paper_literal = true;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Generate => commands::generate(&cfg, cli.force),
        Command::Fit => commands::fit(&cfg, cli.force),
        Command::Invert => commands::invert(&cfg, cli.force),
        Command::Evaluate => commands::evaluate(&cfg, cli.force),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
