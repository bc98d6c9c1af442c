//! Splitting, metrics, training runs, the architecture-by-embedding comparison grid
//! and a synthetic corpus for desk-scale checks.

mod compare;
mod metrics;
mod split;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use crate::corpus::LabeledText;
use crate::embedding::EmbeddingTable;
use crate::models::{
    percentile_length, save_checkpoint, train, Architecture, Example, Hyperparameters, Model, ModelConfig, ModelError,
    TrainingTrace,
};
use crate::normalize::Normalizer;
use crate::Polarity;

pub use compare::{
    compare, write_comparison_csv, write_timing_csv, CellOutcome, CellResult, CompareOptions, CompareReport,
    EmbeddingEntry, COMPARISON_HEADER, TIMING_HEADER,
};
pub use metrics::{evaluate, ClassMetrics, MetricsReport};
pub use split::{split, Split, SplitSpec, MIN_SPLIT_SIZE};
pub use synth::{synth_corpus, synth_corpus_with, SynthCorpus, SynthOptions};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("corpus of {n} items is too small to split (need at least {min} and a nonempty train partition)")]
    TooSmall { n: usize, min: usize },
    #[error("invalid split: {0}")]
    Spec(String),
    #[error("empty evaluation set")]
    EmptyDataset,
    #[error("synthetic corpus: {0}")]
    Synth(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A labeled document after normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDoc {
    pub doc_id: String,
    pub label: Polarity,
    pub tokens: Vec<String>,
}

pub fn tokenize(docs: &[LabeledText], normalizer: &Normalizer<'_>) -> Vec<TokenizedDoc> {
    docs.iter()
        .map(|d| TokenizedDoc {
            doc_id: d.doc_id.clone(),
            label: d.label,
            tokens: normalizer.normalize(&d.text).tokens,
        })
        .collect()
}

pub fn encode(docs: &[TokenizedDoc], table: &EmbeddingTable, padded_length: usize) -> Vec<Example> {
    docs.iter()
        .map(|d| Example {
            doc: table.encode(&d.tokens, padded_length),
            label: d.label,
        })
        .collect()
}

/// One training run on a labeled corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRequest {
    pub architecture: Architecture,
    /// Replaces the tabled defaults when set.
    pub hyperparameters: Option<Hyperparameters>,
    pub seed: u64,
    /// Defaults to the 99th percentile of training-document lengths.
    pub padded_length: Option<usize>,
    pub split: SplitSpec,
}

impl TrainRequest {
    pub fn new(architecture: Architecture, seed: u64) -> Self {
        Self {
            architecture,
            hyperparameters: None,
            seed,
            padded_length: None,
            split: SplitSpec {
                seed,
                ..SplitSpec::default()
            },
        }
    }

    fn hyperparameters(&self) -> Hyperparameters {
        self.hyperparameters
            .clone()
            .unwrap_or_else(|| Hyperparameters::defaults(self.architecture))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: TrainingTrace,
    pub test_metrics: MetricsReport,
    pub split_sizes: (usize, usize, usize),
}

/// Splits, encodes, trains on the train partition with validation tracking and
/// scores the test partition.
pub fn train_on_corpus(
    docs: &[TokenizedDoc],
    table: &EmbeddingTable,
    request: &TrainRequest,
) -> Result<TrainOutcome, HarnessError> {
    let parts = split(docs.to_vec(), |d| d.label, &request.split)?;
    let hyper = request.hyperparameters();
    let padded_length = request.padded_length.unwrap_or_else(|| {
        let lengths: Vec<usize> = parts.train.iter().map(|d| d.tokens.len()).collect();
        percentile_length(&lengths, hyper.filter_size.unwrap_or(1))
    });
    let mut config = ModelConfig::new(request.architecture, padded_length, table.dim()).with_seed(request.seed);
    config.hyperparameters = hyper;
    let mut model = Model::build(config)?;

    let train_set = encode(&parts.train, table, padded_length);
    let val_set = encode(&parts.val, table, padded_length);
    let test_set = encode(&parts.test, table, padded_length);
    let trace = train(&mut model, &train_set, &val_set)?;
    let test_metrics = evaluate(&model, &test_set)?;
    Ok(TrainOutcome {
        model,
        trace,
        test_metrics,
        split_sizes: (parts.train.len(), parts.test.len(), parts.val.len()),
    })
}

/// Paths of the files [`write_run_artifacts`] produces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunArtifacts {
    pub checkpoint: PathBuf,
    pub trace: PathBuf,
    pub metrics: PathBuf,
}

/// Writes `<stem>.checkpoint.json`, `<stem>.trace.csv` and `<stem>.metrics.json`.
pub fn write_run_artifacts(
    dir: &Path,
    stem: &str,
    outcome: &TrainOutcome,
    fingerprint: &str,
) -> Result<RunArtifacts, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let paths = RunArtifacts {
        checkpoint: dir.join(format!("{stem}.checkpoint.json")),
        trace: dir.join(format!("{stem}.trace.csv")),
        metrics: dir.join(format!("{stem}.metrics.json")),
    };
    save_checkpoint(&paths.checkpoint, &outcome.model.checkpoint(fingerprint))?;
    let mut trace = Vec::new();
    outcome.trace.write_csv(&mut trace).expect("in-memory csv");
    fs::write(&paths.trace, trace).map_err(io_err(&paths.trace))?;
    let metrics = serde_json::to_string_pretty(&outcome.test_metrics).expect("metrics serialize");
    fs::write(&paths.metrics, metrics + "\n").map_err(io_err(&paths.metrics))?;
    Ok(paths)
}
