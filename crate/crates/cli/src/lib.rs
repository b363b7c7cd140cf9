//! Command-line front end: scene synthesis, training, table building,
//! streaming inference, benchmarking and scoring.
//!
//! Every command is a plain function so tests can drive it without a
//! process boundary. Errors carry the exit-code class: 2 for bad
//! configuration or arguments, 1 for failures while running.

// Checks are written `!(x > 0.0)` so that NaN is rejected as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

pub mod bench;
pub mod data;
pub mod eval;
pub mod infer;
pub mod synth;
pub mod train;

#[derive(Debug)]
pub enum CliError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn config<E: Into<anyhow::Error>>(e: E) -> Self {
        CliError::Config(e.into())
    }

    pub fn runtime<E: Into<anyhow::Error>>(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration error: {e:#}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

/// Reads a TOML file into `T`; unreadable or malformed files are
/// configuration errors.
pub fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(anyhow::anyhow!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::config(anyhow::anyhow!("{}: {e}", path.display())))
}

#[derive(Parser, Debug)]
#[command(name = "eventnet", version, about = "Recursive event-camera feature engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InferMode {
    Global,
    Eventwise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalTask {
    Seg,
    Motion,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a labelled synthetic scene.
    Synth {
        /// Scene TOML; the built-in desk scene when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write `train/` and `test/` halves split at this fraction.
        #[arg(long)]
        split: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a scene directory.
    Train {
        /// Directory with events.csv, labels.csv and optionally motion.csv.
        #[arg(long)]
        data: PathBuf,
        /// Run TOML with `[model]` and `[train]` tables.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Continue from these weights instead of a fresh model.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        tau_us: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Weights output; the loss log goes next to it as `.loss.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the per-pixel feature table for trained weights.
    Lut {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream events through the engine and query the heads at a fixed rate.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        /// Feature table; required unless the model's mode is non-recursive.
        #[arg(long)]
        lut: Option<PathBuf>,
        /// events.csv, or a scene directory containing it.
        #[arg(long)]
        events: PathBuf,
        #[arg(long, value_enum, default_value = "global")]
        mode: InferMode,
        #[arg(long, default_value_t = 1000.0)]
        query_hz: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure per-event cost, throughput and head latency.
    Bench {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        lut: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        rate_meps: f64,
        #[arg(long, default_value_t = 1.0)]
        duration_s: f64,
        #[arg(long, default_value_t = 32_000)]
        tau_us: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        /// labels.csv for `seg`, motion.csv for `motion`.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum)]
        task: EvalTask,
        /// Window length used to express motion in pixels per window.
        #[arg(long, default_value_t = 32_000)]
        tau_us: u64,
    },
}

/// Runs one command, printing key=value results to stdout.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth {
            config,
            seed,
            split,
            out,
        } => synth::cmd_synth(config.as_deref(), seed, split, &out),
        Command::Train {
            data,
            config,
            init,
            mode,
            k,
            tau_us,
            seed,
            out,
        } => {
            let overrides = train::Overrides {
                mode: mode
                    .map(|m| m.parse())
                    .transpose()
                    .map_err(|e: String| CliError::config(anyhow::anyhow!(e)))?,
                k,
                tau_us,
                seed,
            };
            train::cmd_train(&data, config.as_deref(), init.as_deref(), &overrides, &out)
        }
        Command::Lut { weights, out } => train::cmd_lut(&weights, &out),
        Command::Infer {
            weights,
            lut,
            events,
            mode,
            query_hz,
            out,
        } => infer::cmd_infer(&weights, lut.as_deref(), &events, mode, query_hz, &out),
        Command::Bench {
            weights,
            lut,
            k,
            rate_meps,
            duration_s,
            tau_us,
            seed,
        } => {
            let opts = bench::BenchOptions {
                k,
                rate_meps,
                duration_s,
                tau_us,
                seed,
                ..bench::BenchOptions::default()
            };
            let report = bench::cmd_bench(weights.as_deref(), lut.as_deref(), &opts)?;
            print!("{report}");
            Ok(())
        }
        Command::Eval {
            predictions,
            truth,
            task,
            tau_us,
        } => {
            let metrics = eval::cmd_eval(&predictions, &truth, task, tau_us)?;
            print!("{metrics}");
            Ok(())
        }
    }
}
