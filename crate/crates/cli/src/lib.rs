//! Command-line driver for the rotation-invariant masked-autoencoder
//! pipeline: pretraining, probing, finetuning, feature dumps, and ablation
//! sweeps, all deterministic in (config, seed).

pub mod commands;
pub mod config;
pub mod data;
pub mod output;

use std::path::PathBuf;
use std::sync::Once;

use clap::{Parser, Subcommand, ValueEnum};
use hfbm_mae::{FinetuneScope, MaeError};
use hfbm_probe::ProbeError;
use thiserror::Error;

use commands::{FinetuneTask, SweepKind};
use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or unusable files; exits 2.
    #[error("{0}")]
    Config(String),
    /// Unusable data; exits 3.
    #[error("{0}")]
    Data(String),
    /// Numeric failure during training; exits 4.
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<MaeError> for CliError {
    fn from(e: MaeError) -> Self {
        match &e {
            MaeError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            MaeError::Config(_) | MaeError::Checkpoint(_) | MaeError::Io(_) => {
                CliError::Config(e.to_string())
            }
            MaeError::Data(_)
            | MaeError::Geometry(_)
            | MaeError::Features(_)
            | MaeError::Cloud(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<ProbeError> for CliError {
    fn from(e: ProbeError) -> Self {
        match e {
            ProbeError::Data(msg) => CliError::Data(msg),
            ProbeError::Pipeline(inner) => inner.into(),
        }
    }
}

impl From<hfbm_core::pcio::PcioError> for CliError {
    fn from(e: hfbm_core::pcio::PcioError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Classification,
    Segmentation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScopeArg {
    /// Train only the task head; the backbone stays bitwise frozen.
    Head,
    /// Train every parameter.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepArg {
    /// Pretrain once per mask ratio, then probe.
    Mask,
    /// Pretrain once per dropped feature group, then probe.
    Rilf,
}

#[derive(Debug, Parser)]
#[command(
    name = "hfbm",
    about = "Rotation-invariant point-cloud masked autoencoder pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 (the default) guarantees bitwise determinism.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Output directory, overriding the config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pretrain the masked autoencoder and write checkpoints plus metrics.
    Pretrain {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit a linear probe on frozen features for one train/test setting pair.
    Probe {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Probe every train/test rotation-setting pair (the full grid).
    EvalGrid {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Few-shot episodes on frozen features, reported per episode.
    Fewshot {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Attach a task head and finetune, head-only or end to end.
    Finetune {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long, value_enum, default_value_t = ScopeArg::Head)]
        scope: ScopeArg,
    },
    /// Dump per-cloud frozen features as CSV.
    ExtractFeatures {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Sweep mask ratios or dropped feature groups, pretraining per setting.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        sweep: SweepArg,
    },
}

/// Install the global worker pool once per process. The first caller wins;
/// later calls with a different count keep the existing pool.
pub fn init_threads(n: usize) {
    static POOL: Once = Once::new();
    POOL.call_once(|| {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    });
}

fn dispatch(command: Command) -> Result<(), CliError> {
    let (common, run): (&CommonArgs, Box<dyn FnOnce(&RunConfig) -> Result<(), CliError>>) =
        match &command {
            Command::Pretrain { common } => (common, Box::new(commands::cmd_pretrain)),
            Command::Probe { common, checkpoint } => {
                let ckpt = checkpoint.clone();
                (common, Box::new(move |c| commands::cmd_probe(c, &ckpt)))
            }
            Command::EvalGrid { common, checkpoint } => {
                let ckpt = checkpoint.clone();
                (common, Box::new(move |c| commands::cmd_eval_grid(c, &ckpt)))
            }
            Command::Fewshot { common, checkpoint } => {
                let ckpt = checkpoint.clone();
                (common, Box::new(move |c| commands::cmd_fewshot(c, &ckpt)))
            }
            Command::Finetune {
                common,
                checkpoint,
                task,
                scope,
            } => {
                let ckpt = checkpoint.clone();
                let task = match task {
                    TaskArg::Classification => FinetuneTask::Classification,
                    TaskArg::Segmentation => FinetuneTask::Segmentation,
                };
                let scope = match scope {
                    ScopeArg::Head => FinetuneScope::HeadOnly,
                    ScopeArg::All => FinetuneScope::All,
                };
                (
                    common,
                    Box::new(move |c| commands::cmd_finetune(c, &ckpt, task, scope)),
                )
            }
            Command::ExtractFeatures { common, checkpoint } => {
                let ckpt = checkpoint.clone();
                (
                    common,
                    Box::new(move |c| commands::cmd_extract_features(c, &ckpt)),
                )
            }
            Command::Ablate { common, sweep } => {
                let sweep = match sweep {
                    SweepArg::Mask => SweepKind::MaskRatio,
                    SweepArg::Rilf => SweepKind::RilfGroups,
                };
                (common, Box::new(move |c| commands::cmd_ablate(c, sweep)))
            }
        };
    init_threads(common.threads);
    let config = RunConfig::load(&common.config, common.seed, common.out.clone())?;
    run(&config)
}

/// Parse arguments and run. Returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successful exits by convention.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
