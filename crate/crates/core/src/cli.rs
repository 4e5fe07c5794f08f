//! Command-line surface. Each subcommand reads JSON or CoNLL-U inputs and
//! writes JSON or JSON-lines to standard output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::gradsuite::run_gradcheck;
use crate::harness::metrics::{ClassReport, SpanReport};
use crate::harness::{gen_synthetic, write_synthetic, SynthSpec};
use crate::ingest::annotations::tree_key;
use crate::ingest::{candidate_targets, load_corpus, parse_conllu, AnnotatedSample};
use crate::model::jmasa::eval_jmasa;
use crate::model::train::{train, EvalMetrics, TrainError};
use crate::model::{Model, Task, TrainConfig};
use crate::pretrain::{build_aoe_pairs, build_itm_pairs, dump_pairs, pretrain, PretrainError};
use crate::scope::compute_scope;

pub const MODEL_FILE: &str = "model.json";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug, Parser)]
#[command(
    name = "scopenet",
    version,
    about = "Scope-aware dual graph networks for aspect-based sentiment analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Targets {
    /// Every token.
    All,
    /// Nouns, proper nouns and pronouns.
    Nouns,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// JSON training configuration; absent keys take their defaults.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory holding corpus.conllu and annotations.jsonl.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory for model.json and metrics.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the scope of every target as JSON-lines.
    ParseScopes {
        #[arg(long)]
        conllu: PathBuf,
        #[arg(long, value_enum, default_value_t = Targets::All)]
        targets: Targets,
    },
    /// Write a synthetic corpus from a JSON spec.
    GenSynthetic {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an aspect term extractor.
    TrainMate(TrainArgs),
    /// Train an aspect sentiment classifier.
    TrainMasc(TrainArgs),
    /// Evaluate extraction followed by sentiment classification.
    EvalJmasa {
        #[arg(long)]
        mate: PathBuf,
        #[arg(long)]
        masc: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train the pretraining heads and report held-out accuracies.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Print the constructed pairs as JSON-lines before the report.
        #[arg(long)]
        dump_pairs: bool,
    },
    /// Compare recorded gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Divergence(String),
    #[error("gradient check failed: {0}")]
    Gradcheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Gradcheck(_) => 4,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    let line = serde_json::to_string(value).expect("plain data");
    writeln!(out, "{line}").map_err(input)
}

fn load_config(path: &Path) -> Result<TrainConfig, CliError> {
    let config = TrainConfig::from_json(&read(path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    eprintln!(
        "config: {}",
        serde_json::to_string(&config).expect("plain data")
    );
    Ok(config)
}

fn load(dir: &Path) -> Result<Vec<AnnotatedSample>, CliError> {
    load_corpus(dir).map_err(input)
}

#[derive(Serialize)]
struct ScopeRecord<'a> {
    sample_id: &'a str,
    target: usize,
    start: usize,
    end: usize,
}

fn parse_scopes(path: &Path, targets: Targets, out: &mut dyn Write) -> Result<(), CliError> {
    let trees = parse_conllu(&read(path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    for (k, tree) in trees.iter().enumerate() {
        let id = tree_key(tree, k);
        let chosen = match targets {
            Targets::All => (1..=tree.len()).collect(),
            Targets::Nouns => candidate_targets(tree),
        };
        for t in chosen {
            let sc = compute_scope(tree, t, t).map_err(input)?;
            emit(
                out,
                &ScopeRecord {
                    sample_id: &id,
                    target: t,
                    start: sc.start,
                    end: sc.end,
                },
            )?;
        }
    }
    Ok(())
}

fn train_command(task: Task, args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(&args.config)?;
    let samples = load(&args.corpus)?;
    let outcome = train(task, &samples, &config).map_err(|e| match e {
        TrainError::Divergence { .. } => CliError::Divergence(e.to_string()),
        other => input(other),
    })?;
    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.out.display())))?;
    write_file(&args.out.join(MODEL_FILE), &outcome.model.to_json())?;
    let mut trace = String::new();
    for m in &outcome.trace {
        trace.push_str(&serde_json::to_string(m).expect("plain data"));
        trace.push('\n');
    }
    write_file(&args.out.join(METRICS_FILE), &trace)?;
    let name = match task {
        Task::Mate => "mate",
        Task::Masc => "masc",
    };
    match outcome.trace.last().map(|m| m.eval) {
        Some(EvalMetrics::Spans(prf)) => emit(out, &SpanReport { task: name, prf }),
        Some(EvalMetrics::Classes(metrics)) => emit(
            out,
            &ClassReport {
                task: name,
                metrics,
            },
        ),
        None => Ok(()),
    }
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    Model::from_json(&read(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn pretrain_command(
    config: &Path,
    corpus: &Path,
    dump: bool,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let config = load_config(config)?;
    let samples = load(corpus)?;
    let failed = |e: PretrainError| match e {
        PretrainError::Divergence(_) => CliError::Divergence(e.to_string()),
        other => input(other),
    };
    if dump {
        let with_aspects: Vec<AnnotatedSample> = samples
            .iter()
            .filter(|s| !s.aspects.is_empty())
            .cloned()
            .collect();
        let aoe = build_aoe_pairs(&with_aspects).map_err(failed)?;
        let itm = build_itm_pairs(&with_aspects, config.seed).map_err(failed)?;
        out.write_all(dump_pairs(&aoe, &itm).as_bytes())
            .map_err(input)?;
    }
    let outcome = pretrain(&samples, &config).map_err(failed)?;
    emit(out, &outcome.report)
}

fn gradcheck_command(seed: u64, inject_fault: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let report = run_gradcheck(seed, inject_fault).map_err(input)?;
    for c in &report.components {
        emit(out, c)?;
    }
    let failed: Vec<&str> = report
        .components
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.component)
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Gradcheck(failed.join(", ")))
    }
}

/// Runs one command, writing structured output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::ParseScopes { conllu, targets } => parse_scopes(&conllu, targets, out),
        Command::GenSynthetic { spec, out: dir } => {
            let spec: SynthSpec = serde_json::from_str(&read(&spec)?)
                .map_err(|e| CliError::Input(format!("{}: {e}", spec.display())))?;
            let corpus = gen_synthetic(&spec).map_err(input)?;
            write_synthetic(&dir, &corpus).map_err(input)
        }
        Command::TrainMate(args) => train_command(Task::Mate, &args, out),
        Command::TrainMasc(args) => train_command(Task::Masc, &args, out),
        Command::EvalJmasa { mate, masc, corpus } => {
            let (mate, masc) = (load_model(&mate)?, load_model(&masc)?);
            let samples = load(&corpus)?;
            let prf = eval_jmasa(&mate, &masc, &samples).map_err(input)?;
            emit(out, &SpanReport { task: "jmasa", prf })
        }
        Command::Pretrain {
            config,
            corpus,
            dump_pairs,
        } => pretrain_command(&config, &corpus, dump_pairs, out),
        Command::Gradcheck { seed, inject_fault } => gradcheck_command(seed, inject_fault, out),
    }
}
