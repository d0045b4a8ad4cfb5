use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hybridcast::combine::{HybridConfig, MeanDefinition};
use hybridcast::Variant;
use hybridcast_cli::commands::{self, CombineOptions};
use hybridcast_cli::config::{JobConfig, Overrides};
use hybridcast_cli::{server, CliError};

/// Probabilistic demand forecasting with hybrid expert combination.
#[derive(Debug, Parser)]
#[command(name = "hybridcast", version)]
struct Cli {
    /// Job configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// weighted_average or bias_adjustment.
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// paper_literal or mixture.
    #[arg(long, global = true)]
    mean_definition: Option<MeanDefinition>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Bootstrap, pool and write quantile forecasts for every series.
    Forecast,
    /// Combine point forecasts with quantile forecasts.
    Combine {
        /// Long-form quantile CSV (key, origin, horizon, level, value).
        #[arg(long)]
        prob: PathBuf,
        /// Long-form point CSV (key, origin, horizon, value).
        #[arg(long)]
        point: PathBuf,
        /// Output directory; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use the expert point as-is instead of averaging it with the distribution mean.
        #[arg(long)]
        no_pre_average: bool,
    },
    /// Rolling-origin benchmark of the configured methods.
    Evaluate,
    /// Serve the HTTP API; bind address from HYBRIDCAST_BIND.
    Serve,
}

fn load(cli: &Cli) -> Result<JobConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Input("--config is required for this command".into()))?;
    let overrides = Overrides {
        seed: cli.seed,
        variant: cli.variant,
        mean_definition: cli.mean_definition,
    };
    JobConfig::load(path, &overrides)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Forecast => commands::forecast(&load(cli)?),
        Command::Evaluate => commands::evaluate(&load(cli)?),
        Command::Serve => server::serve(&load(cli)?),
        Command::Combine {
            prob,
            point,
            out,
            no_pre_average,
        } => {
            let config = cli.config.as_ref().map(|_| load(cli)).transpose()?;
            let variant = cli
                .variant
                .or(config.as_ref().map(|c| c.variant))
                .unwrap_or(Variant::WeightedAverage);
            let mut hybrid = config.as_ref().map(|c| c.hybrid_config()).unwrap_or_else(HybridConfig::default);
            if let Some(m) = cli.mean_definition {
                hybrid.mean_definition = m;
            }
            let out = out
                .clone()
                .or(config.as_ref().map(|c| c.output_dir.clone()))
                .ok_or_else(|| CliError::Input("--out or --config is required".into()))?;
            let pre_average = !no_pre_average && config.as_ref().is_none_or(|c| c.pre_average);
            commands::combine(
                prob,
                point,
                &out,
                &CombineOptions {
                    variant,
                    hybrid,
                    pre_average,
                },
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
