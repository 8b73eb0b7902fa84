//! `hyperrisk` command-line tool. Results go to standard output as JSON;
//! progress and warnings go to standard error.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::AppConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] hyperrisk::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(hyperrisk::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    All,
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalSplit {
    Val,
    Test,
}

impl From<EvalSplit> for Split {
    fn from(s: EvalSplit) -> Split {
        match s {
            EvalSplit::Val => Split::Val,
            EvalSplit::Test => Split::Test,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::All => "all",
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl fmt::Display for EvalSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Split::from(*self).fmt(f)
    }
}

/// Hypergraph patient-similarity network for ICU mortality risk.
#[derive(Parser, Debug)]
#[command(name = "hyperrisk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic cohort (patients.csv, vitals.csv, meta.json).
    GenSynthetic {
        /// JSON settings file; its `synthetic` section shapes the cohort
        /// (default 2000 patients, 20% positive, 16 variables, 48 hours, 20 codes).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory, created if missing.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Random seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Load, preprocess, split and train; writes a checkpoint and a JSON log.
    Train {
        /// JSON settings file; its `train` section overrides the defaults
        /// (batch 256, learning rate 0.00039, GRU width 59, 3 hypergraph layers,
        /// aggregation width 37, 4 members of widths 27 and 17, threshold 0.4,
        /// dropout 0.2).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding patients.csv and vitals.csv.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Observation window in hours, 24 or 48 [default: 48].
        #[arg(long)]
        window: Option<usize>,
        /// Seed for splitting, initialization, shuffling and dropout [default: 0].
        #[arg(long)]
        seed: Option<u64>,
        /// Maximum number of epochs [default: 50].
        #[arg(long)]
        epochs: Option<usize>,
        /// Checkpoint file to write.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Training log file [default: <out>.log.json].
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Print metrics of a checkpoint on one data split as JSON.
    Evaluate {
        /// JSON settings file supplying paths not given as flags.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint produced by `train`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory the checkpoint was trained on.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Split to score, recreated from the checkpoint's seed.
        #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
        split: EvalSplit,
        /// Decision threshold for the confusion metrics [default: the checkpoint's, 0.5].
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Compare patients carrying a diagnosis code with everyone else.
    CaseStudy {
        /// JSON settings file supplying paths not given as flags.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint produced by `train`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory the checkpoint was trained on.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// ICD-9 code defining Group I, e.g. 428.0.
        #[arg(long)]
        code: String,
        /// Split to analyse.
        #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
        split: EvalSplit,
    },
    /// Export per-patient representations as CSV.
    Embed {
        /// JSON settings file supplying paths not given as flags.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint produced by `train`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory the checkpoint was trained on.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Representation: gru (width 59), hconv (59 + codes) or aggregated (37).
        #[arg(long)]
        stage: String,
        /// Patients to export.
        #[arg(long, value_enum, default_value_t = Split::All)]
        split: Split,
        /// CSV file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Show configuration.
    Config {
        /// Print the default settings file.
        #[arg(long)]
        dump_defaults: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenSynthetic { config, out_dir, seed } => {
            commands::gen_synthetic_cmd(&AppConfig::load(config.as_deref())?, out_dir, seed)
        }
        Command::Train {
            config,
            data_dir,
            window,
            seed,
            epochs,
            out,
            log,
        } => commands::train_cmd(
            &AppConfig::load(config.as_deref())?,
            commands::TrainArgs {
                data_dir,
                window,
                seed,
                epochs,
                out,
                log,
            },
        ),
        Command::Evaluate {
            config,
            checkpoint,
            data_dir,
            split,
            threshold,
        } => commands::evaluate_cmd(&AppConfig::load(config.as_deref())?, checkpoint, data_dir, split, threshold),
        Command::CaseStudy {
            config,
            checkpoint,
            data_dir,
            code,
            split,
        } => commands::case_study_cmd(&AppConfig::load(config.as_deref())?, checkpoint, data_dir, &code, split),
        Command::Embed {
            config,
            checkpoint,
            data_dir,
            stage,
            split,
            out,
        } => commands::embed_cmd(&AppConfig::load(config.as_deref())?, checkpoint, data_dir, &stage, split, &out),
        Command::Config { dump_defaults } => {
            if dump_defaults {
                commands::dump_defaults()
            } else {
                Err(CliError::Usage("nothing to do; try `config --dump-defaults`".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
