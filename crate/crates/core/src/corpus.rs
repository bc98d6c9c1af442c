//! Post ingestion, selection filters, persistent storage and corpus statistics.
//!
//! The store is an append-only JSONL record log. Indexes are rebuilt from the log
//! when a store is opened, so a damaged log is detected on open instead of being
//! silently partially read.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::annotation::Annotation;
use crate::normalize::Normalizer;
use crate::Polarity;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("duplicate post id `{0}`")]
    DuplicateId(String),
    #[error("invalid post: {0}")]
    InvalidPost(String),
    #[error("store log {path} line {line}: {message}")]
    CorruptLog {
        path: String,
        line: usize,
        message: String,
    },
    #[error("line {line}: {message}")]
    Tsv { line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Twitter,
    Instagram,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPost {
    pub id: String,
    pub source: Source,
    pub text: String,
    pub author_id: String,
    pub timestamp: DateTime<Utc>,
    pub like_count: u64,
    pub comment_count: u64,
    pub domain_tag: String,
}

impl RawPost {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.id.is_empty() {
            return Err(CorpusError::InvalidPost("empty id".into()));
        }
        if self.text.is_empty() {
            return Err(CorpusError::InvalidPost(format!("post `{}` has empty text", self.id)));
        }
        Ok(())
    }
}

/// Post selection filters. Every threshold defaults to 0 and every set to "allow all".
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub min_comment_count: u64,
    pub min_like_count: u64,
    /// Empty means every domain is allowed.
    pub allowed_domains: BTreeSet<String>,
    pub active_author_allowlist: Option<BTreeSet<String>>,
    /// Literal substrings marking advertisements.
    pub ad_marker_patterns: Vec<String>,
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.ad_marker_patterns.iter().any(String::is_empty) {
            return Err(CorpusError::InvalidPost("ad marker patterns must be nonempty".into()));
        }
        Ok(())
    }

    pub fn accepts(&self, post: &RawPost) -> bool {
        post.comment_count >= self.min_comment_count
            && post.like_count >= self.min_like_count
            && (self.allowed_domains.is_empty() || self.allowed_domains.contains(&post.domain_tag))
            && self
                .active_author_allowlist
                .as_ref()
                .is_none_or(|allow| allow.contains(&post.author_id))
            && !self.ad_marker_patterns.iter().any(|m| post.text.contains(m.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub raw_text: String,
    pub tokens: Vec<String>,
    pub token_count: usize,
    pub emoji_count: usize,
    pub source_post: String,
}

impl Document {
    /// Builds the document for `post`, normalizing its text.
    pub fn from_post(post: &RawPost, normalizer: &Normalizer<'_>) -> Self {
        let report = normalizer.normalize(&post.text);
        Document {
            doc_id: post.id.clone(),
            raw_text: post.text.clone(),
            token_count: report.tokens.len(),
            emoji_count: report.emoji_count,
            tokens: report.tokens,
            source_post: post.id.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    UnanimousR1,
    MajorityR1,
    MajorityR2,
}

impl Provenance {
    pub fn round(self) -> u8 {
        match self {
            Provenance::UnanimousR1 | Provenance::MajorityR1 => 1,
            Provenance::MajorityR2 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub doc_id: String,
    pub label: Polarity,
    pub adjudication_round: u8,
    pub provenance: Provenance,
}

impl GoldRecord {
    pub fn new(doc_id: impl Into<String>, label: Polarity, provenance: Provenance) -> Self {
        GoldRecord {
            doc_id: doc_id.into(),
            label,
            adjudication_round: provenance.round(),
            provenance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub class_counts: BTreeMap<Polarity, usize>,
    pub length_histogram: BTreeMap<usize, usize>,
    pub emoji_histogram: BTreeMap<usize, usize>,
    pub mean_length_by_label: BTreeMap<Polarity, f64>,
    /// Documents left out because they have no gold label.
    pub skipped_unlabeled: usize,
}

impl CorpusStats {
    pub fn labeled_total(&self) -> usize {
        self.class_counts.values().sum()
    }
}

/// Class, length and emoji distributions over the labeled documents.
pub fn compute_stats<'a, I>(corpus: I) -> CorpusStats
where
    I: IntoIterator<Item = (&'a Document, Option<&'a GoldRecord>)>,
{
    let mut class_counts: BTreeMap<Polarity, usize> = Polarity::ALL.iter().map(|&p| (p, 0)).collect();
    let mut length_histogram = BTreeMap::new();
    let mut emoji_histogram = BTreeMap::new();
    let mut length_sums: BTreeMap<Polarity, usize> = BTreeMap::new();
    let mut skipped = 0;

    for (doc, gold) in corpus {
        let Some(gold) = gold else {
            skipped += 1;
            continue;
        };
        *class_counts.entry(gold.label).or_default() += 1;
        *length_histogram.entry(doc.token_count).or_default() += 1;
        *emoji_histogram.entry(doc.emoji_count).or_default() += 1;
        *length_sums.entry(gold.label).or_default() += doc.token_count;
    }
    if skipped > 0 {
        log::warn!("{skipped} documents without a gold label were skipped");
    }

    let mean_length_by_label = length_sums
        .into_iter()
        .map(|(label, sum)| (label, sum as f64 / class_counts[&label] as f64))
        .collect();

    CorpusStats {
        class_counts,
        length_histogram,
        emoji_histogram,
        mean_length_by_label,
        skipped_unlabeled: skipped,
    }
}

/// One problem found while ingesting; ingestion continues past it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogRecord {
    Post(RawPost),
    Document(Document),
    Annotation(Annotation),
}

/// Posts, documents and annotations, optionally backed by an append-only log file.
///
/// All mutation goes through `&mut self`; callers that share a store across threads
/// wrap it in a lock so writes are serialized.
#[derive(Debug, Default)]
pub struct CorpusStore {
    log: Option<(PathBuf, BufWriter<File>)>,
    posts: Vec<RawPost>,
    post_index: HashMap<String, usize>,
    documents: BTreeMap<String, Document>,
    annotations: Vec<Annotation>,
}

impl CorpusStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) the log at `path` and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let mut store = Self::in_memory();
        if path.exists() {
            let file = File::open(path).map_err(io_err(path))?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(io_err(path))?;
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |message: String| CorpusError::CorruptLog {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message,
                };
                let record: LogRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
                store.apply(record).map_err(|e| corrupt(e.to_string()))?;
            }
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        store.log = Some((path.to_path_buf(), BufWriter::new(file)));
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.log.as_ref().map(|(p, _)| p.as_path())
    }

    fn apply(&mut self, record: LogRecord) -> Result<(), CorpusError> {
        match record {
            LogRecord::Post(post) => {
                post.validate()?;
                if self.post_index.contains_key(&post.id) {
                    return Err(CorpusError::DuplicateId(post.id));
                }
                self.post_index.insert(post.id.clone(), self.posts.len());
                self.posts.push(post);
            }
            LogRecord::Document(doc) => {
                self.documents.insert(doc.doc_id.clone(), doc);
            }
            LogRecord::Annotation(a) => self.annotations.push(a),
        }
        Ok(())
    }

    /// Writes the record to the log (flushed and synced) before indexing it.
    fn append(&mut self, record: LogRecord) -> Result<(), CorpusError> {
        if let Some((path, writer)) = self.log.as_mut() {
            let line = serde_json::to_string(&record).expect("records serialize");
            let path = path.clone();
            writeln!(writer, "{line}").map_err(io_err(&path))?;
            writer.flush().map_err(io_err(&path))?;
            writer.get_ref().sync_data().map_err(io_err(&path))?;
        }
        self.apply(record)
    }

    pub fn add_post(&mut self, post: RawPost) -> Result<(), CorpusError> {
        post.validate()?;
        if self.post_index.contains_key(&post.id) {
            return Err(CorpusError::DuplicateId(post.id));
        }
        self.append(LogRecord::Post(post))
    }

    /// Loads posts from a JSONL file. Bad lines and duplicate ids are reported in
    /// the returned diagnostics and skipped.
    pub fn ingest(&mut self, path: impl AsRef<Path>) -> Result<IngestReport, CorpusError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(io_err(path))?;
        self.ingest_reader(BufReader::new(file), path)
    }

    pub fn ingest_reader<R: BufRead>(&mut self, reader: R, origin: &Path) -> Result<IngestReport, CorpusError> {
        let mut report = IngestReport::default();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err(origin))?;
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let post = match serde_json::from_str::<RawPost>(&line) {
                Ok(post) => post,
                Err(e) => {
                    report.diagnostics.push(Diagnostic {
                        line: line_no,
                        message: format!("malformed post: {e}"),
                    });
                    continue;
                }
            };
            match self.add_post(post) {
                Ok(()) => report.accepted += 1,
                Err(e @ (CorpusError::DuplicateId(_) | CorpusError::InvalidPost(_))) => {
                    report.diagnostics.push(Diagnostic {
                        line: line_no,
                        message: e.to_string(),
                    })
                }
                Err(e) => return Err(e),
            }
        }
        Ok(report)
    }

    pub fn posts(&self) -> &[RawPost] {
        &self.posts
    }

    pub fn post(&self, id: &str) -> Option<&RawPost> {
        self.post_index.get(id).map(|&i| &self.posts[i])
    }

    /// Posts passing every filter in `config`, in ingestion order.
    pub fn select(&self, config: &SelectionConfig) -> Vec<&RawPost> {
        self.posts.iter().filter(|p| config.accepts(p)).collect()
    }

    /// Normalizes `post_ids` into documents open for annotation. Posts that already
    /// have a document are left alone. Returns the number of new documents.
    pub fn admit<'a, I>(&mut self, post_ids: I, normalizer: &Normalizer<'_>) -> Result<usize, CorpusError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut added = 0;
        for id in post_ids {
            if self.documents.contains_key(id) {
                continue;
            }
            let post = self
                .post(id)
                .ok_or_else(|| CorpusError::InvalidPost(format!("unknown post `{id}`")))?;
            let doc = Document::from_post(post, normalizer);
            self.append(LogRecord::Document(doc))?;
            added += 1;
        }
        Ok(added)
    }

    pub fn add_document(&mut self, doc: Document) -> Result<(), CorpusError> {
        self.append(LogRecord::Document(doc))
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.documents.values()
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.get(id)
    }

    pub fn document_count(&self) -> usize {
        self.documents.len()
    }

    /// Persists an annotation. Validation of the labeling protocol is the caller's job.
    pub fn append_annotation(&mut self, annotation: Annotation) -> Result<(), CorpusError> {
        self.append(LogRecord::Annotation(annotation))
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }
}

/// One line of the exported gold corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledText {
    pub doc_id: String,
    pub label: Polarity,
    pub text: String,
}

pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_field(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => return Err(format!("unknown escape `\\{other}`")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

/// Writes `doc_id \t label \t text` lines. Returns the number of records written.
pub fn write_tsv<W: Write>(mut writer: W, records: &[LabeledText]) -> io::Result<usize> {
    for r in records {
        writeln!(
            writer,
            "{}\t{}\t{}",
            escape_field(&r.doc_id),
            r.label.value(),
            escape_field(&r.text)
        )?;
    }
    writer.flush()?;
    Ok(records.len())
}

pub fn export_tsv(path: impl AsRef<Path>, records: &[LabeledText]) -> Result<usize, CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    write_tsv(BufWriter::new(file), records).map_err(io_err(path))
}

pub fn read_tsv<R: BufRead>(reader: R) -> Result<Vec<LabeledText>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let tsv_err = |message: String| CorpusError::Tsv { line: line_no, message };
        let line = line.map_err(|e| tsv_err(e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (Some(id), Some(label), Some(text)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(tsv_err("expected three tab-separated fields".into()));
        };
        let label: Polarity = label.parse().map_err(|e: crate::PolarityError| tsv_err(e.to_string()))?;
        out.push(LabeledText {
            doc_id: unescape_field(id).map_err(tsv_err)?,
            label,
            text: unescape_field(text).map_err(tsv_err)?,
        });
    }
    Ok(out)
}

pub fn import_tsv(path: impl AsRef<Path>) -> Result<Vec<LabeledText>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    read_tsv(BufReader::new(file))
}
