//! Deterministic cleanup of colloquial Persian microblog text.
//!
//! [`Normalizer::normalize`] runs a fixed pipeline:
//!
//! 1. Unicode NFC.
//! 2. Character map: Arabic letterforms to their Persian equivalents, Arabic-Indic and
//!    Persian digits to ASCII, tatweel and Arabic diacritics dropped.
//! 3. Emoji, including runs written without separators, replaced by their inventory
//!    name token. Emoji missing from the inventory are dropped.
//! 4. URLs, `@mentions`, date-times, numbers and the `#` hashtag marker removed. The
//!    hashtag word itself is kept.
//! 5. Remaining punctuation and symbols removed.
//! 6. Runs of three or more identical characters collapsed to one character.
//! 7. Whitespace tokenization.
//!
//! No dictionary filtering happens at any stage: unknown words pass through.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Version of the character map applied in step 2. Bump whenever [`map_char`] changes.
pub const CHAR_MAP_VERSION: u32 = 1;

const BUILTIN_INVENTORY: &str = include_str!("../data/emoji_inventory.tsv");

const ZWNJ: char = '\u{200C}';
const ZWJ: char = '\u{200D}';
const VS16: char = '\u{FE0F}';
const KEYCAP: char = '\u{20E3}';

#[derive(Debug, thiserror::Error)]
pub enum InventoryError {
    #[error("failed to read emoji inventory {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `<emoji>\\t<name>`")]
    Malformed { line: usize },
    #[error("line {line}: `{key}` is not an emoji sequence")]
    NotEmoji { line: usize, key: String },
    #[error("line {line}: name `{name}` must match [a-z_]+ without runs of three equal characters")]
    BadName { line: usize, name: String },
}

/// Mapping from emoji code-point sequences to name tokens.
///
/// Keys are stored without U+FE0F so that the text and emoji presentation of the
/// same symbol resolve to one entry. Several sequences may share a name.
#[derive(Debug, Clone, Default)]
pub struct EmojiInventory {
    entries: HashMap<String, String>,
    names: HashSet<String>,
    max_key_chars: usize,
}

impl EmojiInventory {
    pub fn new() -> Self {
        Self::default()
    }

    /// The shipped inventory of CLDR short names.
    pub fn builtin() -> &'static EmojiInventory {
        static BUILTIN: OnceLock<EmojiInventory> = OnceLock::new();
        BUILTIN.get_or_init(|| {
            EmojiInventory::from_tsv(BUILTIN_INVENTORY).expect("shipped emoji inventory is valid")
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, InventoryError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| InventoryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_tsv(&text)
    }

    /// Parses `<emoji sequence>\t<name>` lines. Blank lines and lines starting with
    /// `# ` are comments.
    pub fn from_tsv(text: &str) -> Result<Self, InventoryError> {
        let mut inv = Self::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() || line.starts_with("# ") {
                continue;
            }
            let (key, name) = line
                .split_once('\t')
                .ok_or(InventoryError::Malformed { line: line_no })?;
            inv.insert_checked(key, name.trim(), line_no)?;
        }
        Ok(inv)
    }

    pub fn insert(&mut self, sequence: &str, name: &str) -> Result<(), InventoryError> {
        self.insert_checked(sequence, name, 0)
    }

    fn insert_checked(&mut self, sequence: &str, name: &str, line: usize) -> Result<(), InventoryError> {
        if !sequence.chars().any(is_emoji_char) {
            return Err(InventoryError::NotEmoji {
                line,
                key: sequence.to_string(),
            });
        }
        // Names re-enter the pipeline as ordinary words on a second pass, so they
        // must survive steps 4-6 unchanged.
        let valid_name = !name.is_empty()
            && name.chars().all(|c| c.is_ascii_lowercase() || c == '_')
            && !name.starts_with('_')
            && !name.ends_with('_')
            && !has_run(name, 3);
        if !valid_name {
            return Err(InventoryError::BadName {
                line,
                name: name.to_string(),
            });
        }
        let key = strip_presentation(sequence);
        self.max_key_chars = self.max_key_chars.max(key.chars().count());
        self.names.insert(name.to_string());
        self.entries.insert(key, name.to_string());
        Ok(())
    }

    pub fn name_of(&self, sequence: &str) -> Option<&str> {
        self.entries.get(&strip_presentation(sequence)).map(String::as_str)
    }

    pub fn is_name(&self, token: &str) -> bool {
        self.names.contains(token)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Longest inventory key starting at `chars[start]`, skipping presentation
    /// selectors. Returns the name and the number of chars consumed.
    fn longest_match(&self, chars: &[char], start: usize) -> Option<(&str, usize)> {
        let mut key = String::new();
        let mut best = None;
        let mut key_len = 0;
        let mut pos = start;
        while pos < chars.len() && key_len < self.max_key_chars {
            let c = chars[pos];
            pos += 1;
            if c == VS16 {
                continue;
            }
            key.push(c);
            key_len += 1;
            if let Some(name) = self.entries.get(&key) {
                let mut end = pos;
                while end < chars.len() && chars[end] == VS16 {
                    end += 1;
                }
                best = Some((name.as_str(), end - start));
            }
        }
        best
    }
}

fn strip_presentation(s: &str) -> String {
    s.chars().filter(|&c| c != VS16).collect()
}

/// Kind of content removed from the text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    Url,
    Mention,
    Hashtag,
    Number,
    Datetime,
    Punctuation,
    /// An emoji with no inventory entry.
    Emoji,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedSpan {
    pub kind: SpanKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NormalizationReport {
    pub tokens: Vec<String>,
    pub emoji_count: usize,
    pub removed_spans: Vec<RemovedSpan>,
}

impl NormalizationReport {
    pub fn count(&self, kind: SpanKind) -> usize {
        self.removed_spans.iter().filter(|s| s.kind == kind).count()
    }

    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormalizerConfig {
    /// Runs of at least this many identical characters collapse to one.
    pub elongation_threshold: usize,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        Self {
            elongation_threshold: 3,
        }
    }
}

/// The normalization pipeline bound to an emoji inventory.
#[derive(Debug, Clone, Copy)]
pub struct Normalizer<'a> {
    inventory: &'a EmojiInventory,
    config: NormalizerConfig,
}

impl<'a> Normalizer<'a> {
    pub fn new(inventory: &'a EmojiInventory) -> Self {
        Self::with_config(inventory, NormalizerConfig::default())
    }

    pub fn with_config(inventory: &'a EmojiInventory, config: NormalizerConfig) -> Self {
        assert!(config.elongation_threshold >= 2, "elongation threshold must be at least 2");
        Self { inventory, config }
    }

    pub fn normalize(&self, text: &str) -> NormalizationReport {
        let mut removed = Vec::new();

        let nfc: String = text.nfc().collect();
        let mapped: String = nfc.chars().filter_map(map_char).collect();

        let mut tokens = Vec::new();
        for segment in self.split_emoji(&mapped, &mut removed) {
            match segment {
                Segment::Emoji(name) => tokens.push(name.to_string()),
                Segment::Text(text) => {
                    let text = remove_social_noise(&text, &mut removed);
                    let text = remove_punctuation(&text, &mut removed);
                    let text = collapse_runs(&text, self.config.elongation_threshold);
                    tokens.extend(
                        text.split_whitespace()
                            .map(|t| t.trim_matches(|c| c == '_' || c == ZWNJ))
                            .filter(|t| !t.is_empty())
                            .map(str::to_string),
                    );
                }
            }
        }

        let emoji_count = tokens.iter().filter(|t| self.inventory.is_name(t)).count();
        NormalizationReport {
            tokens,
            emoji_count,
            removed_spans: removed,
        }
    }

    /// Whether normalizing the space-joined tokens of `text` reproduces them.
    pub fn is_idempotent(&self, text: &str) -> bool {
        let first = self.normalize(text);
        let second = self.normalize(&first.joined());
        first.tokens == second.tokens
    }

    fn split_emoji(&self, text: &str, removed: &mut Vec<RemovedSpan>) -> Vec<Segment<'a>> {
        let chars: Vec<char> = text.chars().collect();
        let mut segments = Vec::new();
        let mut current = String::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let starts_sequence = is_emoji_char(c)
                || matches!(chars.get(i + 1), Some(&VS16) | Some(&KEYCAP));
            if starts_sequence {
                if let Some((name, len)) = self.inventory.longest_match(&chars, i) {
                    flush_text(&mut current, &mut segments);
                    segments.push(Segment::Emoji(name));
                    i += len;
                    continue;
                }
            }
            if is_emoji_char(c) {
                let end = emoji_cluster_end(&chars, i);
                removed.push(RemovedSpan {
                    kind: SpanKind::Emoji,
                    text: chars[i..end].iter().collect(),
                });
                current.push(' ');
                i = end;
                continue;
            }
            current.push(c);
            i += 1;
        }
        flush_text(&mut current, &mut segments);
        segments
    }
}

/// Free-function form of [`Normalizer::normalize`] with default configuration.
pub fn normalize(text: &str, inventory: &EmojiInventory) -> NormalizationReport {
    Normalizer::new(inventory).normalize(text)
}

pub fn is_idempotent_check(text: &str, inventory: &EmojiInventory) -> bool {
    Normalizer::new(inventory).is_idempotent(text)
}

enum Segment<'a> {
    Text(String),
    Emoji(&'a str),
}

fn flush_text<'a>(current: &mut String, segments: &mut Vec<Segment<'a>>) {
    if !current.is_empty() {
        segments.push(Segment::Text(std::mem::take(current)));
    }
}

/// Step 2. `None` drops the character.
fn map_char(c: char) -> Option<char> {
    match c {
        '\u{064A}' | '\u{0649}' => Some('\u{06CC}'), // Arabic yeh, alef maksura -> Persian yeh
        '\u{0643}' => Some('\u{06A9}'),              // Arabic kaf -> keheh
        '\u{0660}'..='\u{0669}' => char::from_digit(c as u32 - 0x0660, 10),
        '\u{06F0}'..='\u{06F9}' => char::from_digit(c as u32 - 0x06F0, 10),
        '\u{0640}' => None,                          // tatweel
        '\u{064B}'..='\u{065F}' | '\u{0670}' => None, // harakat, superscript alef
        '\u{200B}' | '\u{2028}' | '\u{2029}' => Some(' '),
        _ => Some(c),
    }
}

/// Pictographic code points plus the symbol blocks that carry emoji presentation.
pub fn is_emoji_char(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF
        | 0x2600..=0x27BF
        | 0x2300..=0x23FF
        | 0x2B00..=0x2BFF
        | 0x2194..=0x21AA
        | 0x25AA..=0x25FE
        | 0x00A9 | 0x00AE | 0x203C | 0x2049 | 0x2122 | 0x2139 | 0x24C2
        | 0x2934 | 0x2935 | 0x3030 | 0x303D | 0x3297 | 0x3299)
}

fn is_emoji_modifier(c: char) -> bool {
    matches!(c as u32, 0xFE0F | 0x20E3 | 0x1F3FB..=0x1F3FF | 0xE0020..=0xE007F)
}

/// End (exclusive) of the emoji cluster starting at `start`: trailing modifiers and
/// ZWJ-joined continuations belong to the same symbol.
fn emoji_cluster_end(chars: &[char], start: usize) -> usize {
    let mut i = start + 1;
    loop {
        while i < chars.len() && is_emoji_modifier(chars[i]) {
            i += 1;
        }
        if i + 1 < chars.len() && chars[i] == ZWJ && is_emoji_char(chars[i + 1]) {
            i += 2;
            continue;
        }
        // Regional indicators pair up into flags.
        if (0x1F1E6..=0x1F1FF).contains(&(chars[start] as u32))
            && i == start + 1
            && i < chars.len()
            && (0x1F1E6..=0x1F1FF).contains(&(chars[i] as u32))
        {
            i += 1;
            continue;
        }
        return i;
    }
}

struct NoisePatterns {
    combined: Regex,
}

fn noise_patterns() -> &'static NoisePatterns {
    static PATTERNS: OnceLock<NoisePatterns> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        // Alternation order is priority order: leftmost-first semantics.
        let url = r"(?P<url>(?i:(?:https?|ftp)://|www\.)\S+)";
        let mention = r"(?P<mention>@[\p{L}\p{M}\p{Nd}_.]*)";
        let datetime = concat!(
            r"(?P<datetime>",
            r"\d{4}[-/.]\d{1,2}[-/.]\d{1,2}(?:[T ]\d{1,2}:\d{2}(?::\d{2})?(?:\.\d+)?(?:Z|[+-]\d{2}:?\d{2})?)?",
            r"|\d{1,2}[-/.]\d{1,2}[-/.]\d{2,4}",
            r"|\d{1,2}:\d{2}(?::\d{2})?(?:\s?(?i:am|pm))?",
            r")"
        );
        let number = r"(?P<number>\d+(?:[.,\x{066B}\x{066C}]\d+)*)";
        let hashtag = r"(?P<hashtag>#)";
        let combined = Regex::new(&[url, mention, datetime, number, hashtag].join("|"))
            .expect("noise patterns compile");
        NoisePatterns { combined }
    })
}

/// Step 4. Every removal leaves a space so neighbouring words never fuse.
fn remove_social_noise(text: &str, removed: &mut Vec<RemovedSpan>) -> String {
    let re = &noise_patterns().combined;
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for caps in re.captures_iter(text) {
        let m = caps.get(0).expect("whole match");
        let kind = if caps.name("url").is_some() {
            SpanKind::Url
        } else if caps.name("mention").is_some() {
            SpanKind::Mention
        } else if caps.name("datetime").is_some() {
            SpanKind::Datetime
        } else if caps.name("number").is_some() {
            SpanKind::Number
        } else {
            SpanKind::Hashtag
        };
        out.push_str(&text[last..m.start()]);
        out.push(' ');
        removed.push(RemovedSpan {
            kind,
            text: m.as_str().to_string(),
        });
        last = m.end();
    }
    out.push_str(&text[last..]);
    out
}

fn is_word_char(c: char) -> bool {
    if c == '_' || c == ZWNJ {
        return true;
    }
    if c.is_alphabetic() {
        return true;
    }
    // Combining marks (needed by many scripts) but not presentation selectors.
    is_combining_mark(c) && !matches!(c as u32, 0xFE00..=0xFE0F | 0x20E3)
}

fn is_combining_mark(c: char) -> bool {
    unicode_normalization::char::is_combining_mark(c)
}

/// Step 5. Consecutive removed characters are reported as one span.
fn remove_punctuation(text: &str, removed: &mut Vec<RemovedSpan>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut run = String::new();
    for c in text.chars() {
        if c.is_whitespace() || is_word_char(c) {
            if !run.is_empty() {
                removed.push(RemovedSpan {
                    kind: SpanKind::Punctuation,
                    text: std::mem::take(&mut run),
                });
                out.push(' ');
            }
            out.push(c);
        } else {
            run.push(c);
        }
    }
    if !run.is_empty() {
        removed.push(RemovedSpan {
            kind: SpanKind::Punctuation,
            text: run,
        });
        out.push(' ');
    }
    out
}

/// Step 6. Runs shorter than `threshold` are untouched.
pub fn collapse_runs(text: &str, threshold: usize) -> String {
    let mut out = String::with_capacity(text.len());
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let mut j = i + 1;
        while j < chars.len() && chars[j] == c {
            j += 1;
        }
        let run = j - i;
        if run >= threshold {
            out.push(c);
        } else {
            out.extend(std::iter::repeat_n(c, run));
        }
        i = j;
    }
    out
}

fn has_run(s: &str, len: usize) -> bool {
    let chars: Vec<char> = s.chars().collect();
    chars.windows(len).any(|w| w.iter().all(|&c| c == w[0]))
}
