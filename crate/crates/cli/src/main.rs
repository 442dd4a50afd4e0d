use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use smps::experiments::Regime;
use smps_cli::{parse_config_with, run, CliError, Command, Overrides};

/// Experiments on stochastically generated matrix product states.
///
/// Exit status: 0 on success, 2 when the run's check failed (artifacts are
/// still written), 1 on error. Errors go to stderr as JSON.
#[derive(Parser, Debug)]
#[command(name = "smps", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Config file, or an inline JSON document starting with `{`.
    #[arg(long)]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: config, then SMPS_WORKERS, then all cores).
    #[arg(long, env = "SMPS_WORKERS")]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    separation_min: Option<usize>,
    #[arg(long)]
    separation_max: Option<usize>,
    /// TI, IID, RHO_POLY, RHO_STRETCHED, BETA_EXP or WINDOW.
    #[arg(long)]
    regime: Option<Regime>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Window length L for `window`.
    #[arg(long)]
    window: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out,
        samples: cli.samples,
        separation_min: cli.separation_min,
        separation_max: cli.separation_max,
        regime: cli.regime,
        epsilon: cli.epsilon,
        window: cli.window,
    };
    let result = parse_config_with(&cli.config, &overrides)
        .map_err(CliError::from)
        .and_then(|cfg| run(cli.command, &cfg));
    match result {
        Ok(outcome) => {
            eprintln!("wrote {} to {}", outcome.artifacts.join(", "), outcome.out_dir.display());
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(1)
        }
    }
}
