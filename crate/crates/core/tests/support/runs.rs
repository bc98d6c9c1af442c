//! Training runs and artifact comparison shared by the overfit and determinism checks.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use opinion_core::harness::{
    encode, evaluate, split, synth_corpus, tokenize, SplitSpec, TokenizedDoc,
};
use opinion_core::models::{percentile_length, train, Architecture, Hyperparameters, Model, ModelConfig, TrainingTrace};
use opinion_core::normalize::{EmojiInventory, Normalizer};
use opinion_core::embedding::EmbeddingTable;

/// Batch size for the recurrent stacks on the 180-document synthetic train split.
/// Their tabled batches (128, 256) leave one or two optimizer steps per epoch.
pub const DESK_RECURRENT_BATCH: usize = 16;

pub fn synthetic_docs(seed: u64) -> (Vec<TokenizedDoc>, EmbeddingTable) {
    let corpus = synth_corpus(200, 50, seed).unwrap();
    let docs = tokenize(&corpus.docs, &Normalizer::new(EmojiInventory::builtin()));
    (docs, corpus.table)
}

/// Tabled stack and rates; the CNN keeps its tabled batch, recurrent stacks use
/// [`DESK_RECURRENT_BATCH`].
pub fn overfit_hyperparameters(arch: Architecture, epochs: usize) -> Hyperparameters {
    let mut h = Hyperparameters::defaults(arch);
    h.epochs = epochs;
    if !arch.uses_convolution() {
        h.batch_size = DESK_RECURRENT_BATCH;
    }
    h
}

pub struct OverfitRun {
    pub trace: TrainingTrace,
    pub test_accuracy: f64,
    pub test_size: usize,
}

impl OverfitRun {
    /// First epoch (1-based) whose training accuracy reaches `threshold`.
    pub fn first_epoch_reaching(&self, threshold: f64) -> Option<usize> {
        self.trace.epochs.iter().find(|e| e.train_acc >= threshold).map(|e| e.epoch)
    }
}

/// Trains on the train partition of the default split of `synth_corpus(200, 50, seed)`
/// and scores the held-out test partition.
pub fn overfit_run(arch: Architecture, epochs: usize, seed: u64) -> OverfitRun {
    let (docs, table) = synthetic_docs(seed);
    let spec = SplitSpec { seed, ..SplitSpec::default() };
    let parts = split(docs, |d| d.label, &spec).unwrap();
    let h = overfit_hyperparameters(arch, epochs);
    let lengths: Vec<usize> = parts.train.iter().map(|d| d.tokens.len()).collect();
    let l = percentile_length(&lengths, h.filter_size.unwrap_or(1));
    let mut config = ModelConfig::new(arch, l, table.dim()).with_seed(seed);
    config.hyperparameters = h;
    let mut model = Model::build(config).unwrap();
    let trace = train(&mut model, &encode(&parts.train, &table, l), &encode(&parts.val, &table, l)).unwrap();
    let test = evaluate(&model, &encode(&parts.test, &table, l)).unwrap();
    OverfitRun {
        trace,
        test_accuracy: test.accuracy,
        test_size: test.total,
    }
}

const SECONDS_COLUMNS: [&str; 2] = ["seconds", "mean_epoch_seconds"];

/// CSV text with wall-clock columns removed.
pub fn without_seconds_columns(text: &str) -> String {
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        return String::new();
    };
    let keep: Vec<bool> = header.split(',').map(|h| !SECONDS_COLUMNS.contains(&h)).collect();
    std::iter::once(header)
        .chain(lines)
        .map(|line| {
            line.split(',')
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(f, _)| f)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn without_seconds_json(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.retain(|k, _| !SECONDS_COLUMNS.contains(&k.as_str()));
            map.values_mut().for_each(without_seconds_json);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(without_seconds_json),
        _ => {}
    }
}

/// Every file under `dir`, keyed by relative path. CSVs lose their wall-clock
/// columns and JSON files their `seconds` fields; everything else stays raw bytes.
pub fn artifact_digest(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(dir).unwrap().display().to_string();
            let bytes = fs::read(&path).unwrap();
            let content = if rel.ends_with(".csv") {
                without_seconds_columns(&String::from_utf8(bytes).unwrap()).into_bytes()
            } else if rel.ends_with(".json") && !rel.ends_with(".checkpoint.json") {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                without_seconds_json(&mut v);
                serde_json::to_vec(&v).unwrap()
            } else {
                bytes
            };
            out.insert(rel, content);
        }
    }
    out
}
