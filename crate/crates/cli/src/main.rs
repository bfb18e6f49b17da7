//! gpnkit: train and evaluate posterior-approximation models, verify them
//! against closed-form references, and plot the results.
//!
//! Exit codes: 0 success, 2 configuration error (including bad flags),
//! 3 data error, 4 numeric divergence, 5 verification failure.

use clap::{Parser, Subcommand};
use std::path::PathBuf;

use gpnkit_cli::config::RunConfig;
use gpnkit_cli::error::{CliError, CliResult};
use gpnkit_cli::{eval, figure, train, verify};

#[derive(Parser)]
#[command(
    name = "gpnkit",
    version,
    about = "Posterior approximation for neural networks: train, eval, verify, figure",
    // Bad invocations are configuration errors.
    disable_help_subcommand = true
)]
struct Cli {
    /// Run configuration (TOML). A manifest from a previous run works too.
    #[arg(long, global = true, env = "GPNKIT_CONFIG", value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides every stage seed: init = N, train = N+1, eval = N+2,
    /// data = N+3.
    #[arg(long, global = true, env = "GPNKIT_SEED", value_name = "N")]
    seed: Option<u64>,

    /// Worker threads for independent loops (ensemble member training).
    /// Results are identical for any thread count.
    #[arg(long, global = true, env = "GPNKIT_THREADS", value_name = "N", default_value_t = 1)]
    threads: usize,

    /// Output directory; every command writes its artifacts and manifest here.
    #[arg(long, global = true, env = "GPNKIT_OUT", value_name = "DIR", default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured model; writes checkpoint, loss CSV, manifest.
    Train,
    /// Evaluate a checkpoint on the configured task; writes metrics CSV,
    /// ROC CSV, predictions CSV, manifest.
    Eval {
        /// Checkpoint directory; defaults to eval.checkpoint from the config.
        checkpoint: Option<PathBuf>,
    },
    /// Run a verification suite; exits 5 if any check fails.
    Verify {
        /// One of: conjugate, theorem1, mcmc_smoke.
        suite: String,
    },
    /// Render a figure (SVG + CSV) from earlier artifacts.
    Figure {
        /// One of: posterior_band, roc, scaling.
        kind: String,
        /// Inputs for the kind: posterior_band takes a checkpoint
        /// directory, roc takes roc.csv, scaling takes scaling.csv and
        /// optionally gpn_point.csv.
        inputs: Vec<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> CliResult<Option<(RunConfig, PathBuf)>> {
    let Some(path) = &cli.config else {
        return Ok(None);
    };
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    Ok(Some((cfg, path.clone())))
}

fn require_config(cli: &Cli) -> CliResult<(RunConfig, PathBuf)> {
    load_config(cli)?.ok_or_else(|| CliError::config("--config is required for this command"))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Train => {
            let (cfg, path) = require_config(&cli)?;
            train::run(&cfg, &path, &cli.out, cli.threads)
        }
        Command::Eval { checkpoint } => {
            let (cfg, path) = require_config(&cli)?;
            eval::run(&cfg, &path, checkpoint.as_deref(), &cli.out)
        }
        Command::Verify { suite } => {
            let suite = verify::Suite::from_name(suite)?;
            verify::run(suite, cli.seed, &cli.out)
        }
        Command::Figure { kind, inputs } => {
            let kind = figure::Kind::from_name(kind)?;
            let cfg = load_config(&cli)?;
            let cfg_ref = cfg.as_ref().map(|(c, p)| (c, p.as_path()));
            figure::run(kind, cfg_ref, inputs, &cli.out)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
