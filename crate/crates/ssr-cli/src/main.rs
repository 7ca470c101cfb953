use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use ssr_cli::commands::{self, Artifacts, DirLock};
use ssr_cli::config::{load_config, Overrides};
use ssr_core::dataset::Mode;

#[derive(Parser)]
#[command(
    name = "ssr",
    about = "Span-rewriting pre-training pipeline: datasets, curricula, training, evaluation",
    version
)]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "ssr.toml")]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Rebuild a stage even when its outputs exist.
    #[arg(long, global = true)]
    force: bool,
    /// Imperfect-span generator: ngram|rule|identity|self|external:<cmdline>.
    #[arg(long, global = true)]
    generator: Option<String>,
    /// Curriculum strategy: curriculum|none|anti|loss-only|length-only.
    #[arg(long, global = true)]
    strategy: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic demo corpus (one document per line).
    GenCorpus {
        /// Number of documents.
        #[arg(long, default_value_t = 2000)]
        docs: usize,
        /// Output file.
        #[arg(long)]
        to: PathBuf,
        /// Corpus seed (independent of the pipeline seed).
        #[arg(long, default_value_t = 0)]
        corpus_seed: u64,
    },
    /// Build the vocabulary file from the configured corpus.
    BuildVocab,
    /// Materialize a training dataset.
    BuildDataset {
        /// ssr|infill|distill|denoise
        #[arg(long)]
        mode: String,
    },
    /// Train the n-gram span generator.
    TrainGenerator,
    /// Score rewrite examples and assign curriculum buckets.
    ScoreCurriculum,
    /// Run one pre-training stage.
    Pretrain {
        /// infill|ssr|distill|denoise
        #[arg(long)]
        objective: String,
    },
    /// Build the synthetic rewriting task splits.
    MakeTask,
    /// Fine-tune on the task training split with dev early stopping.
    Finetune {
        /// Checkpoint to start from (default: best available pre-trained).
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the task test split.
    Evaluate {
        /// Checkpoint to evaluate (default: the fine-tuned one).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the whole pipeline: vocab through evaluation.
    RunAll,
    /// Compare all five curriculum strategies with shared data and seeds.
    AblateCurriculum,
    /// Pretty-print one dataset example with its span breakdown.
    Inspect {
        id: String,
        /// Dataset file to search (default: the standard artifacts).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();

    if let Command::GenCorpus { docs, to, corpus_seed } = &cli.command {
        return commands::cmd_gen_corpus(*docs, *corpus_seed, to);
    }

    let overrides = Overrides {
        seed: cli.seed,
        out_dir: cli.out.clone(),
        generator: cli.generator.clone(),
        strategy: cli
            .strategy
            .as_deref()
            .map(str::parse)
            .transpose()
            .map_err(|e| anyhow::anyhow!("{e}"))?,
    };
    let cfg = load_config(&cli.config, &overrides)?;

    // read-only commands skip the directory lock
    if let Command::Inspect { id, dataset } = &cli.command {
        return commands::cmd_inspect(&cfg, id, dataset.as_deref());
    }

    let arts = Artifacts::new(&cfg.out_dir);
    let _lock = DirLock::acquire(&arts)?;
    match &cli.command {
        Command::GenCorpus { .. } | Command::Inspect { .. } => unreachable!("handled above"),
        Command::BuildVocab => commands::cmd_build_vocab(&cfg, cli.force),
        Command::BuildDataset { mode } => {
            let mode: Mode = mode.parse().map_err(|e| anyhow::anyhow!("{e}"))?;
            commands::cmd_build_dataset(&cfg, mode, cli.force)
        }
        Command::TrainGenerator => commands::cmd_train_generator(&cfg, cli.force),
        Command::ScoreCurriculum => commands::cmd_score_curriculum(&cfg, cli.force),
        Command::Pretrain { objective } => {
            let objective: Mode = objective.parse().map_err(|e| anyhow::anyhow!("{e}"))?;
            commands::cmd_pretrain(&cfg, objective, cli.force)
        }
        Command::MakeTask => commands::cmd_make_task(&cfg, cli.force),
        Command::Finetune { init } => commands::cmd_finetune(&cfg, init.as_deref(), cli.force),
        Command::Evaluate { checkpoint } => {
            commands::cmd_evaluate(&cfg, checkpoint.as_deref(), cli.force)
        }
        Command::RunAll => commands::cmd_run_all(&cfg, cli.force),
        Command::AblateCurriculum => commands::cmd_ablate_curriculum(&cfg, cli.force),
    }
}
