//! `asd`: synthesize benchmarks, compute Mel-spectrograms, train, score,
//! evaluate and sweep anomalous sound detectors from a JSON run config.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use asd_core::density::Pooling;
use asd_core::evaluation::ModelTag;
use asd_core::{AsdError, ErrorClass};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(AsdError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<AsdError> for CliError {
    fn from(e: AsdError) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "asd", version, about = "Anomalous sound detection with Mel features and Gaussian mixtures")]
struct Cli {
    /// JSON run config; defaults are used for anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed: the benchmark seed for `synth`, the training seed
    /// for `train`, and the seed list (as a single seed) for `evaluate` and `sweep`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the pipeline model.
    #[arg(long, global = true, value_parser = parse_model)]
    model: Option<ModelTag>,
    #[command(subcommand)]
    command: Command,
}

fn parse_model(s: &str) -> Result<ModelTag, String> {
    s.parse().map_err(|e: AsdError| e.to_string())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MelFormat {
    Csv,
    Fvec,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PoolingArg {
    Mean,
    Sum,
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Mean => Pooling::Mean,
            PoolingArg::Sum => Pooling::Sum,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic benchmark tree.
    Synth {
        /// Target directory (defaults to the config's dataset_root).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Log-Mel spectrogram (dB, not normalized) of one WAV file.
    Melspec {
        wav: PathBuf,
        /// Output file; CSV goes to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: MelFormat,
    },
    /// Fit one detector per machine/SNR combination on normal recordings.
    Train {
        /// Training tree (defaults to the config's dataset_root). Must not
        /// contain anomalous recordings.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score WAV (or FVEC, for external features) files with a saved detector.
    Score {
        model_path: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Defaults to the pooling the detector was saved with.
        #[arg(long, value_enum)]
        pooling: Option<PoolingArg>,
        /// CSV output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the balanced multi-seed evaluation and write report.csv / report.json.
    Evaluate,
    /// Average AUC over the mixture-size and covariance-type grid; writes sweep.csv.
    Sweep,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start thread pool: {e}")))?;
    }
    let mut cfg = config::RunConfig::load(cli.config.as_deref())?;
    if let Some(model) = cli.model {
        cfg.pipeline.model = model;
    }
    match cli.command {
        Command::Synth { out } => {
            if let Some(seed) = cli.seed {
                cfg.synth.synth.seed = seed;
            }
            commands::synth(&cfg, out)
        }
        Command::Melspec { wav, out, format } => commands::melspec(&cfg, &wav, out.as_deref(), format),
        Command::Train { data } => {
            if let Some(seed) = cli.seed {
                cfg.seeds = vec![seed];
            }
            commands::train(&cfg, data)
        }
        Command::Score {
            model_path,
            inputs,
            pooling,
            out,
        } => commands::score(&model_path, &inputs, pooling.map(Pooling::from), out.as_deref()),
        Command::Evaluate => {
            if let Some(seed) = cli.seed {
                cfg.seeds = vec![seed];
            }
            commands::evaluate(&cfg)
        }
        Command::Sweep => {
            if let Some(seed) = cli.seed {
                cfg.seeds = vec![seed];
            }
            commands::sweep(&cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ASD_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("asd: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
