mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use softsensor::ec_model::Mode;
use softsensor::pipeline::{PipelineConfig, PipelineError, Result, Variant};

use commands::Context;

/// NOx soft-sensor pipeline. Every stage reads and writes files in the output
/// directory; set SOFTSENSOR_LOG (e.g. `info`) for progress logs.
#[derive(Debug, Parser)]
#[command(name = "softsensor", version)]
struct Cli {
    /// JSON config; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (data.csv, ground_truth.json).
    Simulate,
    /// Repair outliers, split and normalize.
    Preprocess {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Estimate per-tag delays on the training split.
    Delays {
        /// Largest delay scanned, in seconds.
        #[arg(long)]
        max_delay: Option<i64>,
    },
    /// Rank tags and run adaptive selection.
    Select,
    /// Tune and fit base and error models per variant.
    Train {
        #[arg(long)]
        lag_depth: Option<usize>,
        #[arg(long, value_delimiter = ',', value_parser = commands::parse_variant)]
        variants: Option<Vec<Variant>>,
    },
    /// Predict the test split with every trained variant.
    Predict {
        #[arg(long, value_parser = commands::parse_mode)]
        mode: Option<Mode>,
        #[arg(long, value_delimiter = ',', value_parser = commands::parse_variant)]
        variants: Option<Vec<Variant>>,
    },
    /// Metrics and error histograms from prediction traces, or for a pair of
    /// CSV files when --measured and --predicted are given.
    Evaluate {
        #[arg(long, requires = "predicted")]
        measured: Option<PathBuf>,
        #[arg(long, requires = "measured")]
        predicted: Option<PathBuf>,
        /// Column compared in file mode; defaults to the target tag.
        #[arg(long)]
        column: Option<String>,
        #[arg(long, value_delimiter = ',', value_parser = commands::parse_variant)]
        variants: Option<Vec<Variant>>,
    },
    /// Comparison table and ablations from metrics.csv.
    Report,
    /// Print the effective config (defaults, file and flag overrides) as JSON.
    Config,
    /// Every stage in order; simulates first when there is no input.
    Run {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        max_delay: Option<i64>,
        #[arg(long)]
        lag_depth: Option<usize>,
        #[arg(long, value_parser = commands::parse_mode)]
        mode: Option<Mode>,
        #[arg(long, value_delimiter = ',', value_parser = commands::parse_variant)]
        variants: Option<Vec<Variant>>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) if !path.is_file() => return Err(PipelineError::MissingArtifact(path.clone())),
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.simulate.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    let (max_delay, lag_depth, mode, variants) = match &cli.command {
        Command::Delays { max_delay } => (*max_delay, None, None, None),
        Command::Train { lag_depth, variants } => (None, *lag_depth, None, variants.clone()),
        Command::Predict { mode, variants } => (None, None, *mode, variants.clone()),
        Command::Evaluate { variants, .. } => (None, None, None, variants.clone()),
        Command::Run { max_delay, lag_depth, mode, variants, .. } => (*max_delay, *lag_depth, *mode, variants.clone()),
        _ => (None, None, None, None),
    };
    if let Some(d) = max_delay {
        cfg.delay.max_delay = d;
    }
    if let Some(l) = lag_depth {
        cfg.ec.lag_depth = l;
    }
    if let Some(m) = mode {
        cfg.ec.mode = m;
    }
    cfg.validate()?;
    let ctx = Context { cfg, variants: variants.unwrap_or_else(|| Variant::ALL.to_vec()) };
    match &cli.command {
        Command::Config => {
            print!("{}", ctx.cfg.to_json());
            Ok(())
        }
        Command::Simulate => commands::simulate(&ctx),
        Command::Preprocess { input } => commands::preprocess(&ctx, input.as_deref()),
        Command::Delays { .. } => commands::delays(&ctx),
        Command::Select => commands::select(&ctx),
        Command::Train { .. } => commands::train(&ctx),
        Command::Predict { .. } => commands::predict(&ctx),
        Command::Evaluate { measured: Some(m), predicted: Some(p), column, .. } => {
            print!("{}", commands::evaluate_files(&ctx, m, p, column.as_deref())?);
            Ok(())
        }
        Command::Evaluate { .. } => commands::evaluate_traces(&ctx),
        Command::Report => {
            print!("{}", commands::report(&ctx)?);
            Ok(())
        }
        Command::Run { input, .. } => {
            print!("{}", commands::run_all(&ctx, input.as_deref())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SOFTSENSOR_LOG", "warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::from(2)
        }
    }
}
