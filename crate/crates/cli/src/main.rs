use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use specpred::Error;

mod commands;
mod config;

use commands::{Compare, EvalInputs, IngestSource, Task};
use config::RunConfig;

/// Spectrum forecasting with 3D Swin transformers.
#[derive(Parser, Debug)]
#[command(name = "specpred", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key=value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a clip dataset from captures or the synthetic generator.
    Ingest {
        /// Synthetic scenario (fm_like, lte_like, bursty).
        #[arg(long, conflicts_with = "files")]
        synth: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        clips: Option<usize>,
        /// Capture files, each with a `.hdr` sidecar.
        #[arg(long, num_args = 1..)]
        files: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the spectrogram forecaster (`3d`) or the occupancy-rate forecaster (`sor`).
    Train {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Forecast one sample of a split.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Frame-wise metrics, rate accuracy and the rendering / rate-path comparisons.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        compare: Option<Compare>,
        #[arg(long)]
        sor_checkpoint: Option<PathBuf>,
        #[arg(long)]
        gray_checkpoint: Option<PathBuf>,
        #[arg(long)]
        gray_data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fine-tune a pretrained forecaster on a target dataset.
    Transfer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also train from scratch on the target and compare.
        #[arg(long)]
        scratch: bool,
        /// Source dataset for the feature distance.
        #[arg(long)]
        source_data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Global vs windowed attention cost per stage.
    Flops {
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Occupancy labels of every frame in a dataset.
    SorLabel {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(common: &Common) -> specpred::Result<RunConfig> {
    let mut cfg = RunConfig::new();
    if let Some(p) = &common.config {
        cfg.load_file(p)?;
    }
    for o in &common.overrides {
        cfg.apply(o)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> specpred::Result<String> {
    match cli.command {
        Command::Ingest { synth, seed, clips, files, out, common } => {
            let mut cfg = resolve(&common)?;
            if let Some(s) = synth.as_deref() {
                cfg.set("ingest.scenario", s)?;
            }
            if let Some(s) = seed {
                cfg.set("ingest.seed", s.to_string())?;
            }
            if let Some(c) = clips {
                cfg.set("ingest.clips", c.to_string())?;
            }
            let source = if files.is_empty() {
                if synth.is_none() && common.config.is_none() {
                    return Err(Error::Config("ingest needs --synth SCENARIO or --files".into()));
                }
                IngestSource::Synth
            } else {
                IngestSource::Files(&files)
            };
            commands::ingest(&cfg, source, &out)
        }
        Command::Train { task, data, out, common } => commands::train(&resolve(&common)?, task, &data, &out),
        Command::Predict { checkpoint, data, index, out, common } => {
            commands::predict(&resolve(&common)?, &checkpoint, &data, index, &out)
        }
        Command::Evaluate { checkpoint, data, compare, sor_checkpoint, gray_checkpoint, gray_data, out, common } => {
            let inputs = EvalInputs {
                checkpoint: &checkpoint,
                data: &data,
                compare,
                sor_checkpoint: sor_checkpoint.as_deref(),
                gray_checkpoint: gray_checkpoint.as_deref(),
                gray_data: gray_data.as_deref(),
            };
            commands::evaluate(&resolve(&common)?, &inputs, &out)
        }
        Command::Transfer { checkpoint, data, scratch, source_data, out, common } => {
            commands::transfer(&resolve(&common)?, &checkpoint, &data, scratch, source_data.as_deref(), &out)
        }
        Command::Flops { out, common } => commands::flops(&resolve(&common)?, out.as_deref()),
        Command::SorLabel { data, out, common } => commands::sor_label(&resolve(&common)?, &data, &out),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Checkpoint(_) | Error::Shape { .. } => 2,
        Error::Data(_) | Error::Io { .. } => 3,
        Error::Numeric(_) => 4,
        Error::Graph(_) => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
