//! Pretrained word vectors with character n-gram composition for unknown words.
//!
//! Tables are read from the usual whitespace-separated text format
//! (`token v1 ... vd`, optional `<count> <dim>` header). Tokens that start with `<`
//! or end with `>` are boundary n-grams and go to the n-gram table; interior n-grams
//! can be merged from a separate file with [`EmbeddingTable::load_ngrams`].

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::neural::Tensor2;

pub const DEFAULT_DIM: usize = 100;
pub const DEFAULT_NGRAM_RANGE: (usize, usize) = (3, 6);

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: empty embedding file")]
    Empty { path: String },
    #[error("{path} line {line}: expected {expected} components, found {found}")]
    Dimension {
        path: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path} line {line}: `{value}` is not a number")]
    NotNumeric { path: String, line: usize, value: String },
    #[error("invalid n-gram range [{min}, {max}]")]
    NgramRange { min: usize, max: usize },
    #[error("vector for `{token}` has {found} components, table dimension is {expected}")]
    VectorLength {
        token: String,
        expected: usize,
        found: usize,
    },
}

/// Lookup counters, exposed as JSON by the CLI.
#[derive(Debug, Default)]
struct Counters {
    lookups: AtomicU64,
    oov: AtomicU64,
    misses: AtomicU64,
    truncated_tokens: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingStats {
    pub lookups: u64,
    /// Lookups answered by n-gram composition.
    pub oov: u64,
    /// OOV lookups where no n-gram matched and the zero vector was returned.
    pub misses: u64,
    /// Tokens dropped because a document exceeded the padded length.
    pub truncated_tokens: u64,
}

/// Word vectors plus character n-gram vectors of one dimension.
#[derive(Debug)]
pub struct EmbeddingTable {
    dim: usize,
    words: HashMap<String, Vec<f64>>,
    ngrams: HashMap<String, Vec<f64>>,
    ngram_min: usize,
    ngram_max: usize,
    counters: Counters,
}

impl Clone for EmbeddingTable {
    fn clone(&self) -> Self {
        Self {
            dim: self.dim,
            words: self.words.clone(),
            ngrams: self.ngrams.clone(),
            ngram_min: self.ngram_min,
            ngram_max: self.ngram_max,
            counters: Counters::default(),
        }
    }
}

fn is_boundary_ngram(token: &str) -> bool {
    token.starts_with('<') || token.ends_with('>')
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            words: HashMap::new(),
            ngrams: HashMap::new(),
            ngram_min: DEFAULT_NGRAM_RANGE.0,
            ngram_max: DEFAULT_NGRAM_RANGE.1,
            counters: Counters::default(),
        }
    }

    pub fn with_ngram_range(mut self, min: usize, max: usize) -> Result<Self, EmbeddingError> {
        self.set_ngram_range(min, max)?;
        Ok(self)
    }

    pub fn set_ngram_range(&mut self, min: usize, max: usize) -> Result<(), EmbeddingError> {
        if min == 0 || min > max {
            return Err(EmbeddingError::NgramRange { min, max });
        }
        self.ngram_min = min;
        self.ngram_max = max;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ngram_range(&self) -> (usize, usize) {
        (self.ngram_min, self.ngram_max)
    }

    pub fn vocab_len(&self) -> usize {
        self.words.len()
    }

    pub fn ngram_len(&self) -> usize {
        self.ngrams.len()
    }

    /// True when the table carries subword information (FastText-style).
    pub fn has_subwords(&self) -> bool {
        !self.ngrams.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains_key(token)
    }

    fn check_len(&self, token: &str, v: &[f64]) -> Result<(), EmbeddingError> {
        if v.len() != self.dim {
            return Err(EmbeddingError::VectorLength {
                token: token.to_string(),
                expected: self.dim,
                found: v.len(),
            });
        }
        Ok(())
    }

    pub fn insert_word(&mut self, token: impl Into<String>, v: Vec<f64>) -> Result<(), EmbeddingError> {
        let token = token.into();
        self.check_len(&token, &v)?;
        self.words.insert(token, v);
        Ok(())
    }

    pub fn insert_ngram(&mut self, gram: impl Into<String>, v: Vec<f64>) -> Result<(), EmbeddingError> {
        let gram = gram.into();
        self.check_len(&gram, &v)?;
        self.ngrams.insert(gram, v);
        Ok(())
    }

    pub fn words(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.words.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn ngrams(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ngrams.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Reads a text vector file. The dimension comes from the header when present,
    /// otherwise from the first vector line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let (dim, entries) = read_vec_file(path.as_ref())?;
        let mut table = Self::new(dim);
        for (token, v) in entries {
            if is_boundary_ngram(&token) {
                table.ngrams.insert(token, v);
            } else {
                table.words.insert(token, v);
            }
        }
        Ok(table)
    }

    /// Merges a file whose every entry is an n-gram, markers or not.
    pub fn load_ngrams(&mut self, path: impl AsRef<Path>) -> Result<usize, EmbeddingError> {
        let path = path.as_ref();
        let (dim, entries) = read_vec_file(path)?;
        if dim != self.dim {
            return Err(EmbeddingError::Dimension {
                path: path.display().to_string(),
                line: 1,
                expected: self.dim,
                found: dim,
            });
        }
        let added = entries.len();
        self.ngrams.extend(entries);
        Ok(added)
    }

    /// Writes words and boundary n-grams in the text format, sorted by token.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        let entries: Vec<(&String, &Vec<f64>)> = self
            .words
            .iter()
            .chain(self.ngrams.iter().filter(|(k, _)| is_boundary_ngram(k)))
            .collect();
        write_vec_file(path.as_ref(), self.dim, entries)
    }

    pub fn save_ngrams(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        write_vec_file(path.as_ref(), self.dim, self.ngrams.iter().collect())
    }

    /// Character n-grams of `<token>` with lengths in the table's range, deduplicated.
    pub fn ngrams_of(&self, token: &str) -> BTreeSet<String> {
        let chars: Vec<char> = std::iter::once('<')
            .chain(token.chars())
            .chain(std::iter::once('>'))
            .collect();
        let mut grams = BTreeSet::new();
        for n in self.ngram_min..=self.ngram_max.min(chars.len()) {
            for w in chars.windows(n) {
                grams.insert(w.iter().collect());
            }
        }
        grams
    }

    /// Vector for `token`: the stored vector when known, otherwise the sum of the
    /// vectors of its known n-grams, otherwise zeros.
    pub fn lookup(&self, token: &str) -> Vec<f64> {
        self.counters.lookups.fetch_add(1, Ordering::Relaxed);
        if let Some(v) = self.words.get(token) {
            return v.clone();
        }
        self.counters.oov.fetch_add(1, Ordering::Relaxed);
        let mut sum = vec![0.0; self.dim];
        let mut found = false;
        // BTreeSet order keeps the floating-point sum independent of load order.
        for gram in self.ngrams_of(token) {
            if let Some(v) = self.ngrams.get(&gram) {
                found = true;
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
            }
        }
        if !found {
            self.counters.misses.fetch_add(1, Ordering::Relaxed);
        }
        sum
    }

    /// Embeds `tokens` into a `padded_len x dim` matrix, zero-padded at the end and
    /// truncated past `padded_len`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], padded_len: usize) -> DocumentMatrix {
        assert!(padded_len >= 1, "padded length must be at least 1");
        let true_length = tokens.len().min(padded_len);
        if tokens.len() > padded_len {
            self.counters
                .truncated_tokens
                .fetch_add((tokens.len() - padded_len) as u64, Ordering::Relaxed);
        }
        let mut matrix = Tensor2::zeros(padded_len, self.dim);
        for (row, token) in tokens.iter().take(padded_len).enumerate() {
            matrix.row_mut(row).copy_from_slice(&self.lookup(token.as_ref()));
        }
        DocumentMatrix { matrix, true_length }
    }

    pub fn stats(&self) -> EmbeddingStats {
        EmbeddingStats {
            lookups: self.counters.lookups.load(Ordering::Relaxed),
            oov: self.counters.oov.load(Ordering::Relaxed),
            misses: self.counters.misses.load(Ordering::Relaxed),
            truncated_tokens: self.counters.truncated_tokens.load(Ordering::Relaxed),
        }
    }

    /// Content hash of the table, independent of insertion order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.ngram_min as u64).to_le_bytes());
        h.update((self.ngram_max as u64).to_le_bytes());
        for (kind, map) in [(b'w', &self.words), (b'n', &self.ngrams)] {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            for k in keys {
                h.update([kind]);
                h.update((k.len() as u64).to_le_bytes());
                h.update(k.as_bytes());
                for x in &map[k] {
                    h.update(x.to_bits().to_le_bytes());
                }
            }
        }
        let digest = h.finalize();
        digest[..16].iter().map(|b| format!("{b:02x}")).collect()
    }
}

type VecEntries = Vec<(String, Vec<f64>)>;

/// The file's dimension and its `(token, vector)` entries in file order.
fn read_vec_file(path: &Path) -> Result<(usize, VecEntries), EmbeddingError> {
    let p = || path.display().to_string();
    let file = File::open(path).map_err(|source| EmbeddingError::Io { path: p(), source })?;
    let mut dim: Option<usize> = None;
    let mut declared_count = None;
    let mut entries = Vec::new();

    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| EmbeddingError::Io { path: p(), source })?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();

        if line_no == 1 && rest.len() == 1 {
            if let (Ok(count), Ok(d)) = (token.parse::<usize>(), rest[0].parse::<usize>()) {
                declared_count = Some(count);
                dim = Some(d);
                continue;
            }
        }

        let expected = *dim.get_or_insert(rest.len());
        if rest.len() != expected || expected == 0 {
            return Err(EmbeddingError::Dimension {
                path: p(),
                line: line_no,
                expected,
                found: rest.len(),
            });
        }
        let mut v = Vec::with_capacity(expected);
        for value in rest {
            let x: f64 = value.parse().ok().filter(|x: &f64| x.is_finite()).ok_or_else(|| {
                EmbeddingError::NotNumeric {
                    path: p(),
                    line: line_no,
                    value: value.to_string(),
                }
            })?;
            v.push(x);
        }
        entries.push((token.to_string(), v));
    }

    let Some(dim) = dim.filter(|_| !entries.is_empty()) else {
        return Err(EmbeddingError::Empty { path: p() });
    };
    if let Some(count) = declared_count.filter(|&c| c != entries.len()) {
        log::warn!("{}: header declares {count} vectors, file has {}", p(), entries.len());
    }
    Ok((dim, entries))
}

fn write_vec_file(path: &Path, dim: usize, mut entries: Vec<(&String, &Vec<f64>)>) -> Result<(), EmbeddingError> {
    let io_err = |source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    };
    entries.sort_by(|a, b| a.0.cmp(b.0));
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    writeln!(w, "{} {}", entries.len(), dim).map_err(io_err)?;
    for (token, v) in entries {
        write!(w, "{token}").map_err(io_err)?;
        for x in v {
            write!(w, " {x}").map_err(io_err)?;
        }
        writeln!(w).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// A document as a fixed-size matrix: one embedding row per token, then zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentMatrix {
    pub matrix: Tensor2,
    /// Number of leading rows that hold tokens.
    pub true_length: usize,
}

impl DocumentMatrix {
    pub fn padded_len(&self) -> usize {
        self.matrix.rows()
    }
}
