//! `forge`: one entry point for every pipeline stage.
//!
//! Exit status 0 on success, 1 on a data or configuration error (one JSON
//! line on stderr), 2 on a usage error.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use forge_core::config::Config;

use crate::manifest::Run;

#[derive(Debug, Parser)]
#[command(name = "forge", version, about = "Referring-phrase dataset, evaluation and grounding-model toolkit")]
struct Cli {
    /// JSON config; missing keys take their defaults, unknown keys are errors.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 uses every core. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw boxes to describe from each scene graph.
    Sample {
        /// Scene graphs, JSON Lines.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate a referring phrase for each sampled box.
    Phrases {
        /// Scene graphs, JSON Lines.
        #[arg(long)]
        input: PathBuf,
        /// Output of `sample`.
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Also write the category vocabulary here.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score annotators, drop untrusted ones, keep one annotation per task.
    Qc {
        /// Annotations, JSON Lines of {task_id, worker_id, polygons}.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Turn selected annotations into instance masks and subset tags.
    Refine {
        /// Output of `qc`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score predictions against annotated tasks.
    Eval {
        /// Annotated tasks.
        #[arg(long, visible_alias = "input")]
        tasks: PathBuf,
        /// Predictions, JSON Lines of {task_id, rle}.
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Export the detection channels the model sees.
    Channels {
        /// Detections, JSON Lines.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the grounding model.
    Train {
        /// Annotated training tasks.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        /// Checkpoint to write.
        #[arg(long)]
        output: PathBuf,
        /// Annotated tasks for threshold selection; the training tasks otherwise.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Word vectors, one `word v1 v2 …` per line.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Predict a mask for each task with a trained model.
    Predict {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Category substitution map from `substitute`.
        #[arg(long)]
        substitutions: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Map each phrase category to the detector category that best covers it.
    Substitute {
        /// Annotated training tasks.
        #[arg(long)]
        input: PathBuf,
        /// Detections whose category indices are vocabulary positions.
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Sample { .. } => "sample",
            Command::Phrases { .. } => "phrases",
            Command::Qc { .. } => "qc",
            Command::Refine { .. } => "refine",
            Command::Eval { .. } => "eval",
            Command::Channels { .. } => "channels",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Substitute { .. } => "substitute",
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .context("cannot start the worker pool")?;
    let config_path = cli.config.as_deref();
    let cfg = load_config(config_path, cli.seed)?;
    let mut run = Run::new(cli.command.name(), cfg, config_path);
    let r = &mut run;
    match &cli.command {
        Command::Sample { input, output, report } => commands::sample(r, input, output, report.as_deref()),
        Command::Phrases { input, samples, output, vocab, report } => {
            commands::phrases(r, input, samples, output, vocab.as_deref(), report.as_deref())
        }
        Command::Qc { input, tasks, output, report } => commands::qc(r, input, tasks, output, report.as_deref()),
        Command::Refine { input, tasks, vocab, output, report } => {
            commands::refine(r, config_path, input, tasks, vocab, output, report.as_deref())
        }
        Command::Eval { tasks, preds, report } => commands::eval(r, tasks, preds, report),
        Command::Channels { input, output } => commands::channels(r, input, output),
        Command::Train { input, detections, output, val, embeddings, report } => commands::train_model(
            r,
            input,
            detections,
            output,
            val.as_deref(),
            embeddings.as_deref(),
            report.as_deref(),
        ),
        Command::Predict { input, detections, model, substitutions, output } => {
            commands::predict(r, input, detections, model, substitutions.as_deref(), output)
        }
        Command::Substitute { input, detections, vocab, output } => {
            commands::substitute(r, input, detections, vocab, output)
        }
    }?;
    let manifest = run.finish()?;
    log::info!("wrote {}", manifest.display());
    Ok(())
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    use forge_core::Error as E;
    match e.chain().find_map(|c| c.downcast_ref::<forge_core::Error>()) {
        Some(E::Config(_)) => "config",
        Some(E::Io { .. }) => "io",
        Some(E::Parse { .. }) | Some(E::Json(_)) => "parse",
        Some(E::Evaluation(_)) => "evaluation",
        Some(E::Diverged { .. }) => "diverged",
        Some(E::Checkpoint(_)) => "checkpoint",
        Some(E::Record { .. }) => "record",
        Some(E::Task { .. }) => "task",
        Some(E::Model(_)) => "model",
        Some(E::Geometry(_) | E::Rle(_) | E::SizeMismatch { .. }) => "geometry",
        None => "data",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({
                "error": format!("{e:#}"),
                "kind": error_kind(&e),
            });
            eprintln!("{line}");
            ExitCode::from(1)
        }
    }
}
