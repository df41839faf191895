//! The `lexsum` command line.

pub mod config;
pub mod manifest;

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lexsum::corpus::{self, Corpus, SplitRatios, Vocab};
use lexsum::extraction::{
    self, ExtractionConfig, Extractor, LeadN, OracleExtractor, PolicyExtractor, DEFAULT_LEAD_N, DEFAULT_STOP_THRESHOLD,
};
use lexsum::metrics::RougeLVariant;
use lexsum::oracle::{self, OracleObjective};
use lexsum::policy::{self, PolicyConfig, PolicyParams, PreparedDocument};
use lexsum::training::{self, BestCheckpoint, TrainFailure, TrainingData};

use crate::config::{load_config, parse_override, ConfigError};
use crate::manifest::{manifest_path, write_atomic, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "lexsum", version, about = "Extractive summarization of long documents")]
struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "LEXSUM_WORKERS", value_parser = clap::value_parser!(u32).range(1..))]
    workers: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a corpus and write it in canonical pre-segmented form.
    Ingest(IngestArgs),
    /// Print corpus length statistics.
    Stats {
        #[arg(long)]
        input: PathBuf,
    },
    /// Greedy oracle labels for every document with a gold summary.
    OracleLabel(OracleArgs),
    /// Train a policy with REINFORCE.
    Train(TrainArgs),
    /// Extract summaries with a trained policy.
    Extract(ExtractArgs),
    /// Evaluate the stop threshold over a grid.
    Sweep(SweepArgs),
    /// Score Lead-N, the policy and the oracle against gold summaries.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Also write train/val/test splits into this directory.
    #[arg(long)]
    split_dir: Option<PathBuf>,
    /// Split fractions as train,val,test.
    #[arg(long, default_value = "0.94,0.03,0.03", requires = "split_dir")]
    ratios: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "r12")]
    objective: OracleObjective,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Oracle labels, used for warm-start episodes.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Override one config key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for --set seed=S.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_STOP_THRESHOLD)]
    tau: f64,
    #[arg(long, default_value_t = ExtractionConfig::default().max_summary_sentences)]
    max_sents: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Grid as start:end:step.
    #[arg(long, default_value = "0.0:1.0:0.05")]
    taus: String,
    #[arg(long, default_value_t = ExtractionConfig::default().max_summary_sentences)]
    max_sents: usize,
    #[arg(long, default_value = "flattened")]
    reward_variant: RougeLVariant,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = DEFAULT_STOP_THRESHOLD)]
    tau: f64,
    #[arg(long, default_value_t = ExtractionConfig::default().max_summary_sentences)]
    max_sents: usize,
    #[arg(long, default_value_t = DEFAULT_LEAD_N)]
    lead: usize,
}

/// How a command failed; decides the exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Numeric(String),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

/// A missing config file is a data problem; anything else in the config is usage.
fn usage(e: ConfigError) -> Failure {
    match e {
        ConfigError::Io { .. } => Failure::Data(e.into()),
        _ => Failure::Usage(e.to_string()),
    }
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let workers = cli.workers.map(|w| w as usize).unwrap_or_else(|| {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    });
    // Already built when `run` is called twice in one process; keep the first.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();

    match dispatch(cli.command, workers) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {}", describe(&e));
            EXIT_DATA
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {msg}");
            EXIT_NUMERIC
        }
    }
}

/// The error chain joined with ": ", skipping causes already quoted by
/// their parent's message.
fn describe(error: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in error.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn dispatch(command: Command, workers: usize) -> Result<(), Failure> {
    match command {
        Command::Ingest(args) => ingest(args),
        Command::Stats { input } => {
            let corpus = read_corpus(&input)?;
            print!("{}", corpus::compute_stats(&corpus)?);
            Ok(())
        }
        Command::OracleLabel(args) => oracle_label(args, workers),
        Command::Train(args) => train(args),
        Command::Extract(args) => extract(args),
        Command::Sweep(args) => sweep(args),
        Command::Evaluate(args) => evaluate(args),
    }
}

fn read_corpus(path: &Path) -> anyhow::Result<Corpus> {
    corpus::load_corpus(path).with_context(|| format!("reading corpus {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}

fn save_corpus(corpus: &Corpus, path: &Path) -> anyhow::Result<()> {
    write_atomic(path, |w| corpus::write_corpus(corpus, w))
}

fn save_checkpoint(params: &PolicyParams, vocab: &Vocab, path: &Path) -> anyhow::Result<()> {
    write_atomic(path, |w| policy::write_checkpoint(params, vocab, w))
}

fn load_model(path: &Path) -> anyhow::Result<policy::Checkpoint> {
    policy::load_checkpoint(path).with_context(|| format!("loading model {}", path.display()))
}

fn prepare(corpus: Corpus, vocab: &Vocab, config: &PolicyConfig) -> Vec<PreparedDocument> {
    corpus.documents.into_iter().map(|d| PreparedDocument::new(d, vocab, config)).collect()
}

fn parse_ratios(text: &str) -> Result<SplitRatios, Failure> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("--ratios {text:?}: expected three numbers like 0.8,0.1,0.1")))?;
    match parts.as_slice() {
        &[train, val, test] => Ok(SplitRatios { train, val, test }),
        _ => Err(Failure::Usage(format!("--ratios {text:?}: expected three numbers"))),
    }
}

fn ingest(args: IngestArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let corpus = read_corpus(&args.input)?;
    let mut manifest = RunManifest::new("ingest", Some(args.seed));
    manifest.input("input", &args.input).output("corpus", &args.output);
    save_corpus(&corpus, &args.output)?;
    if let Some(dir) = &args.split_dir {
        let ratios = parse_ratios(&args.ratios)?;
        manifest.config.insert("ratios".into(), args.ratios.clone());
        let split = corpus::split_corpus(&corpus, ratios, args.seed)?;
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
            let path = dir.join(format!("{name}.jsonl"));
            save_corpus(part, &path)?;
            manifest.output(name, &path);
        }
    }
    eprintln!("ingested {} documents", corpus.len());
    manifest.wallclock_s = started.elapsed().as_secs_f64();
    manifest.save(&manifest_path(&args.output))?;
    Ok(())
}

fn oracle_label(args: OracleArgs, workers: usize) -> Result<(), Failure> {
    let started = Instant::now();
    let corpus = read_corpus(&args.input)?;
    let summary = oracle::label_documents(&corpus, workers, args.objective)?;
    write_atomic(&args.output, |w| oracle::write_labels(&summary.labels, w))?;
    for skip in &summary.skipped {
        eprintln!("skipped {}: {}", skip.id, skip.reason);
    }
    eprintln!(
        "labeled {} documents, skipped {}, mean objective {:.4}",
        summary.labels.len(),
        summary.skipped.len(),
        summary.mean_objective
    );
    let mut manifest = RunManifest::new("oracle-label", None);
    manifest.config.insert("objective".into(), format!("{:?}", args.objective).to_lowercase());
    manifest.input("input", &args.input).output("labels", &args.output);
    manifest.wallclock_s = started.elapsed().as_secs_f64();
    manifest.save(&manifest_path(&args.output))?;
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let mut overrides = args.overrides.iter().map(|o| parse_override(o)).collect::<Result<Vec<_>, _>>().map_err(usage)?;
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    let mut settings = load_config(args.config.as_deref(), &overrides).map_err(usage)?;

    let train_corpus = read_corpus(&args.train)?;
    let val_corpus = read_corpus(&args.val)?;
    let vocab = Vocab::build(&train_corpus, settings.min_freq);
    settings.policy.vocab_size = vocab.len();
    let train_docs = prepare(train_corpus, &vocab, &settings.policy);
    let val_docs = prepare(val_corpus, &vocab, &settings.policy);
    let labels: Option<HashMap<String, Vec<usize>>> = match &args.labels {
        Some(path) => Some(
            oracle::load_labels(path)
                .with_context(|| format!("reading labels {}", path.display()))?
                .into_iter()
                .map(|l| (l.doc_id, l.indices))
                .collect(),
        ),
        None => None,
    };

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let model_path = args.out.join("model.ckpt");
    let history_path = args.out.join("history.tsv");
    let mut manifest = RunManifest::new("train", Some(settings.trainer.seed));
    manifest.config = settings.entries();
    manifest.config.insert("vocab_size".into(), vocab.len().to_string());
    manifest.input("train", &args.train).input("val", &args.val);
    if let Some(path) = &args.labels {
        manifest.input("labels", path);
    }
    if let Some(path) = &args.config {
        manifest.input("config", path);
    }

    let data = TrainingData { train: &train_docs, val: &val_docs, labels: labels.as_ref() };
    let best = BestCheckpoint { path: &model_path, vocab: &vocab };
    let result = training::train(&data, &settings.policy, &settings.trainer, Some(&best));
    let finish = |mut manifest: RunManifest| -> anyhow::Result<()> {
        manifest.wallclock_s = started.elapsed().as_secs_f64();
        manifest.save(&args.out.join("manifest.json"))
    };
    match result {
        Ok(outcome) => {
            let final_path = args.out.join("final.ckpt");
            save_checkpoint(&outcome.final_params, &vocab, &final_path)?;
            write_text(&history_path, &training::render_history(&outcome.history))?;
            manifest.output("model", &model_path).output("final", &final_path).output("history", &history_path);
            manifest.config.insert("best_val_reward".into(), format!("{:.6}", outcome.best_val_reward));
            eprintln!("best validation reward {:.4}", outcome.best_val_reward);
            finish(manifest)?;
            Ok(())
        }
        Err(TrainFailure::Numeric(failure)) => {
            let last_good = args.out.join("last_good.ckpt");
            save_checkpoint(&failure.last_good, &vocab, &last_good)?;
            write_text(&history_path, &training::render_history(&failure.history))?;
            manifest.output("model", &model_path).output("last_good", &last_good).output("history", &history_path);
            finish(manifest)?;
            Err(Failure::Numeric(format!(
                "training aborted at update {}: {}; last good parameters in {}",
                failure.update,
                failure.reason,
                last_good.display()
            )))
        }
        Err(TrainFailure::Setup(e)) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct ExtractRecord<'a> {
    id: &'a str,
    indices: &'a [usize],
    sentences: Vec<&'a str>,
}

fn extract(args: ExtractArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let config = ExtractionConfig { stop_threshold: args.tau, max_summary_sentences: args.max_sents };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let model = load_model(&args.model)?;
    let docs = prepare(read_corpus(&args.input)?, &model.vocab, model.params.config());
    let system = PolicyExtractor { name: "policy".into(), params: &model.params, config };
    let picks: Vec<Vec<usize>> = {
        use rayon::prelude::*;
        docs.par_iter().map(|d| system.extract(d)).collect::<Result<_, _>>()?
    };
    write_atomic(&args.output, |w| {
        for (doc, indices) in docs.iter().zip(&picks) {
            let record = ExtractRecord {
                id: &doc.document.id,
                indices,
                sentences: indices.iter().map(|&i| doc.document.sentences[i].raw.as_str()).collect(),
            };
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    let mut manifest = RunManifest::new("extract", None);
    manifest.config.insert("tau".into(), args.tau.to_string());
    manifest.config.insert("max_sents".into(), args.max_sents.to_string());
    manifest.input("model", &args.model).input("input", &args.input).output("summaries", &args.output);
    manifest.wallclock_s = started.elapsed().as_secs_f64();
    manifest.save(&manifest_path(&args.output))?;
    Ok(())
}

fn parse_grid(text: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::Usage(format!("--taus {text:?}: expected start:end:step within [0, 1]"));
    let parts: Vec<f64> = text.split(':').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    match parts.as_slice() {
        &[start, end, step] if step > 0.0 && start <= end && (0.0..=1.0).contains(&start) && end <= 1.0 => {
            Ok(extraction::threshold_grid(start, end, step))
        }
        _ => Err(bad()),
    }
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let grid = parse_grid(&args.taus)?;
    let model = load_model(&args.model)?;
    let docs = prepare(read_corpus(&args.val)?, &model.vocab, model.params.config());
    let report = extraction::sweep_threshold(&docs, &model.params, &grid, args.max_sents, args.reward_variant)?;
    let text = report.render();
    match &args.output {
        Some(path) => {
            write_text(path, &text)?;
            let mut manifest = RunManifest::new("sweep", None);
            manifest.config.insert("taus".into(), args.taus.clone());
            manifest.config.insert("max_sents".into(), args.max_sents.to_string());
            manifest.config.insert("reward_variant".into(), args.reward_variant.to_string());
            manifest.input("model", &args.model).input("val", &args.val).output("report", path);
            manifest.wallclock_s = started.elapsed().as_secs_f64();
            manifest.save(&manifest_path(path))?;
            eprintln!("recommended tau {:.4}", report.recommended_tau);
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let config = ExtractionConfig { stop_threshold: args.tau, max_summary_sentences: args.max_sents };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let model = load_model(&args.model)?;
    let labels = oracle::load_labels(&args.labels).with_context(|| format!("reading labels {}", args.labels.display()))?;
    let docs = prepare(read_corpus(&args.input)?, &model.vocab, model.params.config());
    let lead = LeadN::new(args.lead);
    let learned = PolicyExtractor { name: "policy".into(), params: &model.params, config };
    let oracle = OracleExtractor::new("oracle", &labels);
    let report = extraction::evaluate(&docs, &[&lead, &learned, &oracle])?;
    let text = report.render();
    write_text(&args.report, &text)?;
    print!("{text}");
    let mut manifest = RunManifest::new("evaluate", None);
    manifest.config.insert("tau".into(), args.tau.to_string());
    manifest.config.insert("max_sents".into(), args.max_sents.to_string());
    manifest.config.insert("lead".into(), args.lead.to_string());
    manifest
        .input("model", &args.model)
        .input("labels", &args.labels)
        .input("input", &args.input)
        .output("report", &args.report);
    manifest.wallclock_s = started.elapsed().as_secs_f64();
    manifest.save(&manifest_path(&args.report))?;
    Ok(())
}
