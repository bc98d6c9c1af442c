use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, train_on_corpus, write_run_artifacts, HarnessError, MetricsReport, SplitSpec, TokenizedDoc, TrainRequest};
use crate::embedding::EmbeddingTable;
use crate::models::{Architecture, Hyperparameters, TrainingTrace};

pub const COMPARISON_HEADER: [&str; 5] = ["architecture", "embedding_label", "f1_macro", "accuracy", "mean_epoch_seconds"];
pub const TIMING_HEADER: [&str; 4] = ["architecture", "embedding_label", "epoch", "seconds"];

pub struct EmbeddingEntry<'a> {
    pub label: String,
    pub table: &'a EmbeddingTable,
}

#[derive(Debug, Clone, Default)]
pub struct CompareOptions {
    pub seed: u64,
    pub split: SplitSpec,
    pub padded_length: Option<usize>,
    /// Per-architecture replacements for the tabled defaults.
    pub hyperparameters: BTreeMap<Architecture, Hyperparameters>,
    /// When set, every cell is persisted here and completed cells are reused on rerun.
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Completed {
        metrics: MetricsReport,
        trace: TrainingTrace,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub architecture: Architecture,
    pub embedding_label: String,
    /// Hash of everything the cell's result depends on; a stored cell is reused only
    /// when it matches.
    pub inputs_hash: String,
    pub outcome: CellOutcome,
}

impl CellResult {
    pub fn is_completed(&self) -> bool {
        matches!(self.outcome, CellOutcome::Completed { .. })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompareReport {
    pub cells: Vec<CellResult>,
    /// Cells taken from a previous run instead of retrained.
    pub reused: usize,
}

impl CompareReport {
    pub fn failed(&self) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(|c| !c.is_completed())
    }
}

fn file_stem(arch: Architecture, label: &str) -> String {
    let safe: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("{}__{safe}", arch.name())
}

fn inputs_hash(docs: &[TokenizedDoc], fingerprint: &str, request: &TrainRequest) -> String {
    let mut h = Sha256::new();
    for d in docs {
        h.update(d.doc_id.as_bytes());
        h.update([0, d.label.class_index() as u8]);
        for t in &d.tokens {
            h.update(t.as_bytes());
            h.update([0]);
        }
        h.update([1]);
    }
    h.update(fingerprint.as_bytes());
    h.update(format!("{request:?}").as_bytes());
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

fn load_cell(path: &Path, hash: &str) -> Option<CellResult> {
    let body = fs::read_to_string(path).ok()?;
    let cell: CellResult = serde_json::from_str(&body).ok()?;
    (cell.is_completed() && cell.inputs_hash == hash).then_some(cell)
}

/// Trains every architecture against every embedding table on one shared split.
///
/// A failing cell is recorded and the grid continues. With an output directory,
/// cells are written under `cells/` (plus checkpoints and traces under `runs/`) and
/// `comparison.csv` / `timing.csv` are emitted; a rerun retrains only the cells
/// that are missing, failed, or whose inputs changed.
pub fn compare(
    architectures: &[Architecture],
    embeddings: &[EmbeddingEntry<'_>],
    docs: &[TokenizedDoc],
    options: &CompareOptions,
) -> Result<CompareReport, HarnessError> {
    options.split.validate()?;
    let cell_dir = options.output_dir.as_ref().map(|d| d.join("cells"));
    if let Some(dir) = &cell_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }

    let mut report = CompareReport::default();
    for &arch in architectures {
        for emb in embeddings {
            let request = TrainRequest {
                architecture: arch,
                hyperparameters: options.hyperparameters.get(&arch).cloned(),
                seed: options.seed,
                padded_length: options.padded_length,
                split: options.split,
            };
            let fingerprint = emb.table.fingerprint();
            let hash = inputs_hash(docs, &fingerprint, &request);
            let stem = file_stem(arch, &emb.label);
            let cell_path = cell_dir.as_ref().map(|d| d.join(format!("{stem}.json")));

            if let Some(cell) = cell_path.as_deref().and_then(|p| load_cell(p, &hash)) {
                log::info!("{stem}: reusing completed cell");
                report.reused += 1;
                report.cells.push(cell);
                continue;
            }

            log::info!("{stem}: training");
            let outcome = match train_on_corpus(docs, emb.table, &request) {
                Ok(out) => {
                    if let Some(dir) = &options.output_dir {
                        write_run_artifacts(&dir.join("runs"), &stem, &out, &fingerprint)?;
                    }
                    CellOutcome::Completed {
                        metrics: out.test_metrics,
                        trace: out.trace,
                    }
                }
                Err(e) => {
                    log::warn!("{stem}: {e}");
                    CellOutcome::Failed { error: e.to_string() }
                }
            };
            let cell = CellResult {
                architecture: arch,
                embedding_label: emb.label.clone(),
                inputs_hash: hash,
                outcome,
            };
            if let Some(path) = &cell_path {
                let body = serde_json::to_string_pretty(&cell).expect("cell serializes");
                fs::write(path, body + "\n").map_err(io_err(path))?;
            }
            report.cells.push(cell);
        }
    }

    if let Some(dir) = &options.output_dir {
        let path = dir.join("comparison.csv");
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_comparison_csv(file, &report).map_err(io_err(&path))?;
        let path = dir.join("timing.csv");
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_timing_csv(file, &report).map_err(io_err(&path))?;
    }
    Ok(report)
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

/// One row per cell; failed cells leave the metric fields empty.
pub fn write_comparison_csv<W: Write>(out: W, report: &CompareReport) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPARISON_HEADER).map_err(csv_io)?;
    for cell in &report.cells {
        let (f1, acc, secs) = match &cell.outcome {
            CellOutcome::Completed { metrics, trace } => (
                metrics.macro_f1.to_string(),
                metrics.accuracy.to_string(),
                trace.mean_epoch_seconds().to_string(),
            ),
            CellOutcome::Failed { .. } => Default::default(),
        };
        w.write_record([cell.architecture.name(), &cell.embedding_label, &f1, &acc, &secs])
            .map_err(csv_io)?;
    }
    w.flush()
}

/// Seconds per epoch for every completed cell.
pub fn write_timing_csv<W: Write>(out: W, report: &CompareReport) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TIMING_HEADER).map_err(csv_io)?;
    for cell in &report.cells {
        if let CellOutcome::Completed { trace, .. } = &cell.outcome {
            for e in &trace.epochs {
                w.write_record([
                    cell.architecture.name(),
                    &cell.embedding_label,
                    &e.epoch.to_string(),
                    &e.seconds.to_string(),
                ])
                .map_err(csv_io)?;
            }
        }
    }
    w.flush()
}
