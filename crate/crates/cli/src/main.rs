//! `inneralign`: synthesize a corpus, pretrain, select alignment layers,
//! train jointly and run the diagnostics, one subcommand per stage.

mod commands;
mod config;
mod error;
mod layers;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::CliError;
use crate::layers::LayerSpec;

#[derive(Parser, Debug)]
#[command(name = "inneralign", version, about = "Optimal-transport speech/text alignment pipeline")]
struct Cli {
    /// Worker threads for per-sample parallelism (results do not depend on it).
    #[arg(long, global = true, env = "INNERALIGN_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ModalityArg {
    Speech,
    Text,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum TaskArg {
    Translation,
    Recognition,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus (feature files and train/valid/test manifests).
    Synth {
        /// TOML run config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Speech recognition pretraining with cross-entropy only.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-layer speech-to-text retrieval MRR and thresholded layer selection.
    SelectLayers {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Joint cross-entropy + Wasserstein training on the translation task.
    TrainJoint {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Report written by select-layers; required for `--layers auto`.
        #[arg(long)]
        selection: Option<PathBuf>,
        /// auto | none | 0 | 1 | 0,1 | 0..5 | 0..=1
        #[arg(long, default_value = "auto")]
        layers: LayerSpec,
        #[arg(long)]
        out: PathBuf,
    },
    /// Task metrics and greedy generations in speech or text modality.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "speech")]
        modality: ModalityArg,
        #[arg(long, value_enum, default_value = "translation")]
        task: TaskArg,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-layer mean Wasserstein distance and its log.
    AlignScore {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        layers: LayerSpec,
        #[arg(long)]
        selection: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pooled span vectors and their 2-D PCA projection for one layer.
    Project {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    use commands as c;
    match cli.command {
        Command::Synth { config, out } => c::synth(config.as_deref(), &out),
        Command::Pretrain { config, corpus, out } => c::pretrain(config.as_deref(), &corpus, &out),
        Command::SelectLayers {
            config,
            checkpoint,
            corpus,
            out,
        } => c::select_layers(config.as_deref(), &checkpoint, &corpus, &out),
        Command::TrainJoint {
            config,
            checkpoint,
            corpus,
            selection,
            layers,
            out,
        } => c::train_joint(config.as_deref(), &checkpoint, &corpus, selection.as_deref(), &layers, &out),
        Command::Eval {
            config,
            checkpoint,
            corpus,
            modality,
            task,
            split,
            out,
        } => c::eval(config.as_deref(), &checkpoint, &corpus, modality, task, split, &out),
        Command::AlignScore {
            config,
            checkpoint,
            corpus,
            layers,
            selection,
            split,
            out,
        } => c::align_score(
            config.as_deref(),
            &checkpoint,
            &corpus,
            &layers,
            selection.as_deref(),
            split,
            &out,
        ),
        Command::Project {
            config,
            checkpoint,
            corpus,
            layer,
            split,
            out,
        } => c::project(config.as_deref(), &checkpoint, &corpus, layer, split, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::FAILURE
        }
    }
}
