use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use redteam_cli::commands;
use redteam_cli::config::{parse_config, AppConfig, CliError, CliResult};

/// Adversarial prompting toolkit: corpus-guided image perturbation, judged
/// feedback loops for prompt rewriting, and ASR benchmarks over safety
/// scenarios.
#[derive(Parser)]
#[command(name = "redteam", version)]
struct Cli {
    /// TOML config file driving the run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's worker count.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Resolve and validate the full pipeline, print the plan, and stop
    /// before any model call.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the visual prompt; writes PNG + JSON sidecar.
    Perturb,
    /// Run the judged feedback loop for a single query.
    Attack {
        /// The query to optimize.
        #[arg(long)]
        query: String,
        /// Scenario code (IA, HS, MG, PH, EH, FR, PO, PL, PV, LO, FA, HC, GD).
        #[arg(long)]
        scenario: String,
    },
    /// Attack every dataset record and report ASR per scenario.
    Bench,
    /// Optimize on the white-box source model, evaluate on the target.
    Transfer,
    /// Rerun the benchmark varying one knob.
    Ablate {
        /// corpus_variant, visual_prompt_variant, n, or temperature.
        #[arg(long)]
        axis: String,
        /// Comma-separated values for the axis.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Audit toy-model gradients against finite differences.
    Gradcheck {
        /// How many seeded fixtures to check.
        #[arg(long, default_value_t = 20)]
        fixtures: usize,
    },
    /// Re-render the ASR table from a transcript log.
    Report {
        /// Transcript JSONL produced by bench/transfer/ablate.
        #[arg(long)]
        log: PathBuf,
    },
}

/// Loads the config and applies the flag overrides.
fn load_config(cli: &Cli) -> CliResult<AppConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config is required for this command"))?;
    let mut config = parse_config(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(parallelism) = cli.parallelism {
        if parallelism == 0 {
            return Err(CliError::config("--parallelism must be at least 1"));
        }
        config.parallelism = parallelism;
    }
    if let Some(out) = &cli.out {
        config.out_dir = Some(out.clone());
    }
    Ok(config)
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Perturb => commands::perturb(&load_config(cli)?, cli.dry_run),
        Command::Attack { query, scenario } => {
            commands::attack(&load_config(cli)?, cli.dry_run, query, scenario)
        }
        Command::Bench => commands::bench(&load_config(cli)?, cli.dry_run),
        Command::Transfer => commands::transfer(&load_config(cli)?, cli.dry_run),
        Command::Ablate { axis, values } => {
            commands::ablate(&load_config(cli)?, cli.dry_run, axis, values)
        }
        Command::Gradcheck { fixtures } => {
            // config optional: the audit runs on the built-in toy model
            let seed = cli.seed.unwrap_or(0);
            commands::gradcheck(seed, *fixtures, cli.dry_run)
        }
        Command::Report { log } => commands::report(log),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
