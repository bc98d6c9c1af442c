//! `opinion`: ingest posts, run the annotation service, and train, compare and
//! apply the sentiment classifiers.
//!
//! Exit codes: 0 on success, 1 on a usage error (with usage text), 2 on a data
//! error (with a diagnostic naming the offending file and line where known).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use serde_json::json;

use opinion_core::annotation::{AdjudicationConfig, AnnotationEngine, DocStatus};
use opinion_core::corpus::{export_tsv, read_tsv, CorpusStore, LabeledText, SelectionConfig};
use opinion_core::embedding::{EmbeddingTable, DEFAULT_NGRAM_RANGE};
use opinion_core::harness::{
    compare, encode, evaluate, synth_corpus_with, tokenize, train_on_corpus, write_run_artifacts, CompareOptions,
    EmbeddingEntry, SplitSpec, SynthOptions, TrainRequest,
};
use opinion_core::models::{load_checkpoint, predict, Architecture, HyperparameterOverrides, Hyperparameters};
use opinion_core::normalize::{EmojiInventory, Normalizer};
use opinion_service::{ServiceConfig, TOKEN_HEADER};

/// Environment variable holding the annotation service token.
const TOKEN_ENV: &str = "OPINION_TOKEN";

#[derive(Debug, Parser)]
#[command(name = "opinion", version, about = "Colloquial-text opinion corpus and classifier toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load posts from a JSONL file into the corpus store.
    Ingest(IngestArgs),
    /// Apply selection filters and admit the passing posts as documents for annotation.
    Select(SelectArgs),
    /// Normalize stdin, writing one line of space-separated tokens per input line.
    Normalize(NormalizeArgs),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
    /// Adjudicate every document from the stored annotations and print their status.
    Adjudicate(StoreArgs),
    /// Print inter-annotator and self-agreement as JSON.
    Agreement(StoreArgs),
    /// Print class, length and emoji distributions of the gold corpus as JSON.
    Stats(StoreArgs),
    /// Train one architecture on a labeled TSV corpus.
    #[command(after_help = tabled_defaults())]
    Train(TrainArgs),
    /// Score a checkpoint on a labeled TSV corpus.
    Evaluate(EvaluateArgs),
    /// Train every architecture against every embedding table on one shared split.
    #[command(after_help = tabled_defaults())]
    Compare(CompareArgs),
    /// Classify stdin, one document per line, printing one JSON object per line.
    Predict(PredictArgs),
    /// Write the adjudicated gold corpus as TSV (and optionally every annotation as JSONL).
    Export(ExportArgs),
    /// Generate a synthetic labeled corpus and a matching embedding table.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct StoreArgs {
    /// Corpus store log (JSONL).
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
struct ProtocolArgs {
    /// Round-1 labels collected per document.
    #[arg(long, default_value_t = 3)]
    annotators_per_item: usize,
    /// Share of round-1 tasks re-served to the same annotator for self-agreement.
    #[arg(long, default_value_t = 0.05)]
    probe_fraction: f64,
    /// Seed of the probe schedule.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ProtocolArgs {
    fn config(&self) -> AdjudicationConfig {
        AdjudicationConfig {
            annotators_per_item: self.annotators_per_item,
            probe_fraction: self.probe_fraction,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Corpus store log (JSONL); created if missing.
    #[arg(long)]
    corpus: PathBuf,
    /// Posts to load, one JSON object per line.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// Corpus store log (JSONL).
    #[arg(long)]
    corpus: PathBuf,
    /// Selection filters as JSON; the flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Minimum comment count.
    #[arg(long)]
    min_comments: Option<u64>,
    /// Minimum like count.
    #[arg(long)]
    min_likes: Option<u64>,
    /// Allowed domain tag; repeat for several. Default: every domain.
    #[arg(long = "domain")]
    domains: Vec<String>,
    /// Literal substring marking an advertisement; repeat for several.
    #[arg(long = "ad-marker")]
    ad_markers: Vec<String>,
    /// Only list the selected post ids; admit nothing.
    #[arg(long, default_value_t = false)]
    dry_run: bool,
    #[command(flatten)]
    emoji: EmojiArgs,
}

#[derive(Debug, Args)]
struct EmojiArgs {
    /// Emoji inventory TSV (`<sequence>\t<name>`). Default: the built-in inventory.
    #[arg(long)]
    emoji_inventory: Option<PathBuf>,
}

impl EmojiArgs {
    fn load(&self) -> Result<Option<EmojiInventory>> {
        self.emoji_inventory
            .as_ref()
            .map(|p| EmojiInventory::load(p).with_context(|| format!("emoji inventory {}", p.display())))
            .transpose()
    }
}

#[derive(Debug, Args)]
struct NormalizeArgs {
    #[command(flatten)]
    emoji: EmojiArgs,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Corpus store log (JSONL); created if missing.
    #[arg(long)]
    corpus: PathBuf,
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Shared token required in the x-annotation-token header. Unset: no check.
    #[arg(long, env = TOKEN_ENV, hide_env_values = true)]
    token: Option<String>,
    /// Annotator id registered at startup; repeat for several.
    #[arg(long = "annotator")]
    annotators: Vec<String>,
    #[command(flatten)]
    protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
struct EmbeddingArgs {
    /// Word and boundary n-gram vectors, text format.
    #[arg(long)]
    embeddings: PathBuf,
    /// Extra n-gram vector file (interior n-grams included).
    #[arg(long)]
    ngrams: Option<PathBuf>,
    /// Shortest subword n-gram used for OOV composition.
    #[arg(long, default_value_t = DEFAULT_NGRAM_RANGE.0)]
    ngram_min: usize,
    /// Longest subword n-gram used for OOV composition.
    #[arg(long, default_value_t = DEFAULT_NGRAM_RANGE.1)]
    ngram_max: usize,
}

fn load_table(path: &Path, ngrams: Option<&Path>, min: usize, max: usize) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::load(path)?;
    if let Some(p) = ngrams {
        let n = table.load_ngrams(p)?;
        log::info!("{}: {n} n-gram vectors", p.display());
    }
    table.set_ngram_range(min, max)?;
    Ok(table)
}

impl EmbeddingArgs {
    fn load(&self) -> Result<EmbeddingTable> {
        load_table(&self.embeddings, self.ngrams.as_deref(), self.ngram_min, self.ngram_max)
    }
}

#[derive(Debug, Args)]
struct HyperArgs {
    /// JSON file of hyperparameter overrides layered over the tabled defaults.
    #[arg(long)]
    hyperparameters: Option<PathBuf>,
    /// Convolution filter count [default: tabled].
    #[arg(long)]
    filters: Option<usize>,
    /// Convolution window width [default: tabled].
    #[arg(long)]
    filter_size: Option<usize>,
    /// Recurrent widths, comma separated [default: tabled].
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Dropout rates, comma separated, one per slot [default: tabled].
    #[arg(long, value_delimiter = ',')]
    dropout: Option<Vec<f64>>,
    /// Adam learning rate [default: tabled].
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Training epochs [default: tabled].
    #[arg(long)]
    epochs: Option<usize>,
    /// Minibatch size [default: tabled].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Set every filter count and recurrent width to this value.
    #[arg(long)]
    width: Option<usize>,
}

impl HyperArgs {
    /// With `only_applicable`, convolution flags skip architectures without a
    /// convolution and recurrent widths skip those without recurrent layers, so one
    /// set of flags can drive a whole grid.
    fn flag_overrides(&self, defaults: &Hyperparameters, only_applicable: bool) -> HyperparameterOverrides {
        let conv = !only_applicable || defaults.filters.is_some();
        let recurrent = !only_applicable || !defaults.hidden_dims.is_empty();
        HyperparameterOverrides {
            filters: self.filters.filter(|_| conv),
            filter_size: self.filter_size.filter(|_| conv),
            hidden_dims: self.hidden.clone().filter(|_| recurrent),
            dropout_rates: self.dropout.clone(),
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
        }
    }

    fn file_overrides(&self) -> Result<Option<String>> {
        self.hyperparameters
            .as_ref()
            .map(|p| fs::read_to_string(p).with_context(|| format!("reading {}", p.display())))
            .transpose()
    }

    /// Tabled defaults, then `--width`, then the file's overrides, then the flags.
    fn resolve(&self, arch: Architecture, only_applicable: bool) -> Result<Hyperparameters> {
        let mut h = Hyperparameters::defaults(arch);
        if let Some(w) = self.width {
            h = h.narrowed(w);
        }
        if let Some(body) = self.file_overrides()? {
            let path = self.hyperparameters.as_ref().unwrap().display().to_string();
            let o = parse_overrides(&body, arch).with_context(|| path)?;
            h.apply(&o);
        }
        let flags = self.flag_overrides(&h, only_applicable);
        h.apply(&flags);
        Ok(h)
    }
}

/// Accepts either one override object for every architecture or a map keyed by
/// architecture name.
fn parse_overrides(body: &str, arch: Architecture) -> Result<HyperparameterOverrides> {
    if let Ok(o) = serde_json::from_str::<HyperparameterOverrides>(body) {
        return Ok(o);
    }
    let map: BTreeMap<Architecture, HyperparameterOverrides> = serde_json::from_str(body)
        .map_err(|e| anyhow::anyhow!("line {}: not a hyperparameter override object or map: {e}", e.line()))?;
    Ok(map.get(&arch).cloned().unwrap_or_default())
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Test share of the corpus.
    #[arg(long, default_value_t = SplitSpec::default().test_fraction)]
    test_fraction: f64,
    /// Validation share of the corpus.
    #[arg(long, default_value_t = SplitSpec::default().val_fraction)]
    val_fraction: f64,
    /// Shuffle the whole corpus instead of each class separately.
    #[arg(long, default_value_t = false)]
    unstratified: bool,
    /// Padded document length. Default: 99th percentile of training lengths.
    #[arg(long)]
    padded_length: Option<usize>,
}

impl SplitArgs {
    fn spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            train_fraction: 1.0 - self.test_fraction - self.val_fraction,
            test_fraction: self.test_fraction,
            val_fraction: self.val_fraction,
            seed,
            stratified: !self.unstratified,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Architecture: cnn, lstm, cnn_gru, bigru or bilstm.
    #[arg(long, value_parser = parse_arch)]
    arch: Architecture,
    /// Labeled corpus TSV (`doc_id \t label \t text`).
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    embedding: EmbeddingArgs,
    /// Seed for initialization, shuffling, dropout and the split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the checkpoint, trace CSV and metrics.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled corpus TSV, scored in full.
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    embedding: EmbeddingArgs,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Labeled corpus TSV.
    #[arg(long)]
    corpus: PathBuf,
    /// Embedding table as `label=path`; repeat for several.
    #[arg(long = "embeddings", value_parser = parse_labeled_path, required = true)]
    embeddings: Vec<(String, PathBuf)>,
    /// Extra n-gram vector file as `label=path`, matched to the table of that label.
    #[arg(long = "ngrams", value_parser = parse_labeled_path)]
    ngrams: Vec<(String, PathBuf)>,
    /// Shortest subword n-gram used for OOV composition.
    #[arg(long, default_value_t = DEFAULT_NGRAM_RANGE.0)]
    ngram_min: usize,
    /// Longest subword n-gram used for OOV composition.
    #[arg(long, default_value_t = DEFAULT_NGRAM_RANGE.1)]
    ngram_max: usize,
    /// Architectures to train; repeat for several. Default: all five.
    #[arg(long = "arch", value_parser = parse_arch)]
    archs: Vec<Architecture>,
    /// Seed shared by every cell.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for cells, runs, comparison.csv and timing.csv.
    #[arg(long, default_value = "compare")]
    out: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    embedding: EmbeddingArgs,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    store: StoreArgs,
    /// Gold corpus TSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write every stored annotation here, one JSON object per line.
    #[arg(long)]
    annotations: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Number of documents.
    #[arg(long, default_value_t = SynthOptions::default().num_docs)]
    docs: usize,
    /// Vocabulary size, keywords included.
    #[arg(long, default_value_t = SynthOptions::default().vocab_size)]
    vocab: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = SynthOptions::default().dim)]
    dim: usize,
    #[arg(long, default_value_t = SynthOptions::default().seed)]
    seed: u64,
    /// Output directory for corpus.tsv and embeddings.vec.
    #[arg(long, default_value = "synth")]
    out: PathBuf,
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    s.parse().map_err(|e: opinion_core::models::ModelError| e.to_string())
}

fn parse_labeled_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() => Ok((label.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected `label=path`, got `{s}`")),
    }
}

/// The tabled hyperparameters, appended to the help of `train` and `compare`.
fn tabled_defaults() -> String {
    let mut s = String::from("Tabled defaults per architecture (flags and --hyperparameters override them):\n");
    for arch in Architecture::ALL {
        let h = Hyperparameters::defaults(arch);
        let _ = write!(s, "  {:<8}", arch.name());
        if let (Some(f), Some(k)) = (h.filters, h.filter_size) {
            let _ = write!(s, " filters={f} filter_size={k}");
        }
        if !h.hidden_dims.is_empty() {
            let _ = write!(s, " hidden={}", join(&h.hidden_dims));
        }
        let _ = writeln!(
            s,
            " dropout={} learning_rate={} epochs={} batch_size={}",
            join(&h.dropout_rates),
            h.learning_rate,
            h.epochs,
            h.batch_size
        );
    }
    s
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn read_corpus(path: &Path) -> Result<Vec<LabeledText>> {
    let file = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    read_tsv(BufReader::new(file)).with_context(|| path.display().to_string())
}

fn engine_for(store: &CorpusStore, config: AdjudicationConfig) -> Result<AnnotationEngine> {
    let mut engine = AnnotationEngine::new(config, store.documents().map(|d| d.doc_id.clone()))?;
    engine.replay(store.annotations());
    Ok(engine)
}

fn open_existing(path: &Path) -> Result<CorpusStore> {
    if !path.exists() {
        bail!("{}: no such corpus store", path.display());
    }
    Ok(CorpusStore::open(path)?)
}

fn ingest(a: IngestArgs) -> Result<()> {
    let mut store = CorpusStore::open(&a.corpus)?;
    let report = store.ingest(&a.input)?;
    for d in &report.diagnostics {
        log::warn!("{} line {}: {}", a.input.display(), d.line, d.message);
    }
    print_json(&report)
}

fn select(a: SelectArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => {
            let body = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<SelectionConfig>(&body)
                .with_context(|| format!("{}: invalid selection config", p.display()))?
        }
        None => SelectionConfig::default(),
    };
    if let Some(v) = a.min_comments {
        config.min_comment_count = v;
    }
    if let Some(v) = a.min_likes {
        config.min_like_count = v;
    }
    config.allowed_domains.extend(a.domains);
    config.ad_marker_patterns.extend(a.ad_markers);
    config.validate()?;

    let mut store = open_existing(&a.corpus)?;
    let selected: Vec<String> = store.select(&config).into_iter().map(|p| p.id.clone()).collect();
    let admitted = if a.dry_run {
        0
    } else {
        let custom = a.emoji.load()?;
        let inventory = custom.as_ref().unwrap_or_else(|| EmojiInventory::builtin());
        store.admit(selected.iter().map(String::as_str), &Normalizer::new(inventory))?
    };
    print_json(&json!({
        "posts": store.posts().len(),
        "selected": selected.len(),
        "admitted": admitted,
        "selected_ids": selected,
    }))
}

fn normalize(a: NormalizeArgs) -> Result<()> {
    let custom = a.emoji.load()?;
    let normalizer = Normalizer::new(custom.as_ref().unwrap_or_else(|| EmojiInventory::builtin()));
    let mut out = io::BufWriter::new(io::stdout().lock());
    for (idx, line) in io::stdin().lock().lines().enumerate() {
        let line = line.with_context(|| format!("stdin line {}", idx + 1))?;
        writeln!(out, "{}", normalizer.normalize(&line).joined())?;
    }
    out.flush()?;
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let config = ServiceConfig {
        bind: a.bind,
        corpus: a.corpus,
        token: a.token.filter(|t| !t.is_empty()),
        adjudication: a.protocol.config(),
        annotators: a.annotators,
    };
    if config.token.is_none() {
        log::warn!("no token set ({TOKEN_ENV} or --token); {TOKEN_HEADER} is not checked");
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(opinion_service::serve(config))?;
    Ok(())
}

fn adjudicate(a: StoreArgs) -> Result<()> {
    let store = open_existing(&a.corpus)?;
    let engine = engine_for(&store, a.protocol.config())?;
    let statuses = engine.statuses();
    let mut counts: BTreeMap<&str, usize> = ["open", "gold", "needs_round2", "removed"].map(|k| (k, 0)).into();
    for s in statuses.values() {
        let key = match s {
            DocStatus::Open { .. } => "open",
            DocStatus::Gold(_) => "gold",
            DocStatus::NeedsRound2 { .. } => "needs_round2",
            DocStatus::Removed => "removed",
        };
        *counts.get_mut(key).unwrap() += 1;
    }
    print_json(&json!({ "counts": counts, "documents": statuses }))
}

fn agreement(a: StoreArgs) -> Result<()> {
    let store = open_existing(&a.corpus)?;
    print_json(&engine_for(&store, a.protocol.config())?.report())
}

fn stats(a: StoreArgs) -> Result<()> {
    let store = open_existing(&a.corpus)?;
    let engine = engine_for(&store, a.protocol.config())?;
    print_json(&opinion_service::corpus_stats(&store, &engine))
}

fn train(a: TrainArgs) -> Result<()> {
    let table = a.embedding.load()?;
    let docs = tokenize(&read_corpus(&a.corpus)?, &Normalizer::new(EmojiInventory::builtin()));
    let request = TrainRequest {
        architecture: a.arch,
        hyperparameters: Some(a.hyper.resolve(a.arch, false)?),
        seed: a.seed,
        padded_length: a.split.padded_length,
        split: a.split.spec(a.seed),
    };
    let outcome = train_on_corpus(&docs, &table, &request)?;
    let paths = write_run_artifacts(&a.out, a.arch.name(), &outcome, &table.fingerprint())?;
    let (train, test, val) = outcome.split_sizes;
    print_json(&json!({
        "architecture": a.arch,
        "split": { "train": train, "test": test, "val": val },
        "padded_length": outcome.model.config().padded_length,
        "test": { "accuracy": outcome.test_metrics.accuracy, "macro_f1": outcome.test_metrics.macro_f1 },
        "checkpoint": paths.checkpoint,
        "trace": paths.trace,
        "metrics": paths.metrics,
        "embedding_stats": table.stats(),
    }))
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let table = a.embedding.load()?;
    let (model, _) = load_checkpoint(&a.checkpoint, Some(&table.fingerprint()))?;
    let docs = tokenize(&read_corpus(&a.corpus)?, &Normalizer::new(EmojiInventory::builtin()));
    let examples = encode(&docs, &table, model.config().padded_length);
    let report = evaluate(&model, &examples)?;
    print_json(&json!({ "metrics": report, "embedding_stats": table.stats() }))
}

fn compare_cmd(a: CompareArgs) -> Result<()> {
    let mut tables = Vec::new();
    for (label, path) in &a.embeddings {
        let ngrams = a.ngrams.iter().find(|(l, _)| l == label).map(|(_, p)| p.as_path());
        tables.push((label.clone(), load_table(path, ngrams, a.ngram_min, a.ngram_max)?));
    }
    if let Some((label, _)) = a.ngrams.iter().find(|(l, _)| !tables.iter().any(|(t, _)| t == l)) {
        bail!("--ngrams label `{label}` matches no --embeddings entry");
    }
    let docs = tokenize(&read_corpus(&a.corpus)?, &Normalizer::new(EmojiInventory::builtin()));
    let archs = if a.archs.is_empty() { Architecture::ALL.to_vec() } else { a.archs.clone() };
    let hyperparameters = archs
        .iter()
        .map(|&arch| Ok((arch, a.hyper.resolve(arch, true)?)))
        .collect::<Result<_>>()?;
    let options = CompareOptions {
        seed: a.seed,
        split: a.split.spec(a.seed),
        padded_length: a.split.padded_length,
        hyperparameters,
        output_dir: Some(a.out.clone()),
    };
    let entries: Vec<EmbeddingEntry<'_>> = tables
        .iter()
        .map(|(label, table)| EmbeddingEntry {
            label: label.clone(),
            table,
        })
        .collect();
    let report = compare(&archs, &entries, &docs, &options)?;
    let failed: Vec<_> = report
        .failed()
        .map(|c| format!("{}/{}", c.architecture.name(), c.embedding_label))
        .collect();
    for f in &failed {
        log::warn!("cell {f} failed; see its cell file");
    }
    print_json(&json!({
        "cells": report.cells.len(),
        "reused": report.reused,
        "failed": failed,
        "comparison": a.out.join("comparison.csv"),
        "timing": a.out.join("timing.csv"),
    }))
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let table = a.embedding.load()?;
    let (model, _) = load_checkpoint(&a.checkpoint, Some(&table.fingerprint()))?;
    let normalizer = Normalizer::new(EmojiInventory::builtin());
    let mut out = io::BufWriter::new(io::stdout().lock());
    for (idx, line) in io::stdin().lock().lines().enumerate() {
        let line = line.with_context(|| format!("stdin line {}", idx + 1))?;
        let tokens = normalizer.normalize(&line).tokens;
        let p = predict(&model, &tokens, &table).with_context(|| format!("stdin line {}", idx + 1))?;
        serde_json::to_writer(&mut out, &json!({ "label": p.label, "probabilities": p.probabilities }))?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let store = open_existing(&a.store.corpus)?;
    let engine = engine_for(&store, a.store.protocol.config())?;
    let records: Vec<LabeledText> = engine
        .gold_records()
        .into_iter()
        .map(|g| {
            let doc = store.document(&g.doc_id).expect("engine documents come from the store");
            LabeledText {
                doc_id: g.doc_id,
                label: g.label,
                text: doc.raw_text.clone(),
            }
        })
        .collect();
    let written = export_tsv(&a.out, &records)?;
    if let Some(path) = &a.annotations {
        let mut out = io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
        for ann in store.annotations() {
            serde_json::to_writer(&mut out, ann)?;
            writeln!(out)?;
        }
        out.flush()?;
    }
    print_json(&json!({ "gold": written, "annotations": store.annotations().len(), "out": a.out }))
}

fn synth(a: SynthArgs) -> Result<()> {
    let corpus = synth_corpus_with(&SynthOptions {
        num_docs: a.docs,
        vocab_size: a.vocab,
        dim: a.dim,
        seed: a.seed,
        ..SynthOptions::default()
    })?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let corpus_path = a.out.join("corpus.tsv");
    let table_path = a.out.join("embeddings.vec");
    export_tsv(&corpus_path, &corpus.docs)?;
    corpus.table.save(&table_path)?;
    print_json(&json!({
        "docs": corpus.docs.len(),
        "corpus": corpus_path,
        "embeddings": table_path,
        "fingerprint": corpus.table.fingerprint(),
    }))
}

/// Usage line of `subcommand`, or of the whole program when it names none.
fn usage_for(subcommand: Option<&str>) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    match subcommand.and_then(|s| cmd.find_subcommand_mut(s)) {
        Some(sub) => sub.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Select(a) => select(a),
        Command::Normalize(a) => normalize(a),
        Command::Serve(a) => serve(a),
        Command::Adjudicate(a) => adjudicate(a),
        Command::Agreement(a) => agreement(a),
        Command::Stats(a) => stats(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Export(a) => export(a),
        Command::Synth(a) => synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            if !e.render().to_string().contains("Usage:") {
                eprintln!("\n{}", usage_for(std::env::args().nth(1).as_deref()));
            }
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
