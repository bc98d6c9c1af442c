use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::corpus::LabeledText;
use crate::embedding::EmbeddingTable;
use crate::neural::stream_rng;
use crate::Polarity;

// Disjoint consonant and vowel letters; alternating them gives words with no
// repeated neighbours, which the normalizer leaves untouched.
const CONSONANTS: [char; 18] = [
    'ب', 'پ', 'ت', 'ج', 'چ', 'خ', 'د', 'ر', 'ز', 'س', 'ش', 'ف', 'ق', 'گ', 'ل', 'م', 'ن', 'ه',
];
const VOWELS: [char; 3] = ['ا', 'و', 'ی'];
const SYLLABLES: usize = CONSONANTS.len() * VOWELS.len();
const SYLLABLES_PER_WORD: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthOptions {
    pub num_docs: usize,
    pub vocab_size: usize,
    pub seed: u64,
    pub dim: usize,
    pub keywords_per_class: usize,
    /// Token count range of a document, keyword included.
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            num_docs: 200,
            vocab_size: 50,
            seed: 0,
            dim: 16,
            keywords_per_class: 2,
            min_len: 4,
            max_len: 9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub docs: Vec<LabeledText>,
    pub table: EmbeddingTable,
    /// Keyword tokens by class index.
    pub keywords: [Vec<String>; 3],
    pub fillers: Vec<String>,
}

fn word(mut code: usize) -> String {
    let mut w = String::new();
    for _ in 0..SYLLABLES_PER_WORD {
        let s = code % SYLLABLES;
        code /= SYLLABLES;
        w.push(CONSONANTS[s / VOWELS.len()]);
        w.push(VOWELS[s % VOWELS.len()]);
    }
    w
}

/// Balanced three-class corpus where the class is carried by exactly one keyword
/// per document, plus a random embedding table over the whole vocabulary.
pub fn synth_corpus(num_docs: usize, vocab_size: usize, seed: u64) -> Result<SynthCorpus, HarnessError> {
    synth_corpus_with(&SynthOptions {
        num_docs,
        vocab_size,
        seed,
        ..SynthOptions::default()
    })
}

pub fn synth_corpus_with(o: &SynthOptions) -> Result<SynthCorpus, HarnessError> {
    let bad = |m: String| Err(HarnessError::Synth(m));
    if o.num_docs < 9 {
        return bad(format!("need at least 9 documents, got {}", o.num_docs));
    }
    if o.keywords_per_class == 0 || o.vocab_size <= 3 * o.keywords_per_class {
        return bad(format!(
            "vocabulary of {} cannot hold {} keywords per class and any filler",
            o.vocab_size, o.keywords_per_class
        ));
    }
    if o.min_len < 2 || o.min_len > o.max_len {
        return bad(format!("invalid length range {}..={}", o.min_len, o.max_len));
    }
    if o.dim == 0 {
        return bad("embedding dimension must be positive".into());
    }
    let capacity = SYLLABLES.pow(SYLLABLES_PER_WORD);
    if o.vocab_size > capacity {
        return bad(format!("vocabulary is limited to {capacity} words"));
    }

    let mut rng = stream_rng(o.seed, "synth");
    let mut words: Vec<String> = index::sample(&mut rng, capacity, o.vocab_size)
        .into_iter()
        .map(word)
        .collect();
    let fillers = words.split_off(3 * o.keywords_per_class);
    let keywords: [Vec<String>; 3] =
        std::array::from_fn(|c| words[c * o.keywords_per_class..(c + 1) * o.keywords_per_class].to_vec());

    let mut labels: Vec<Polarity> = (0..o.num_docs)
        .map(|i| Polarity::from_class_index(i % 3).expect("three classes"))
        .collect();
    labels.shuffle(&mut rng);

    let docs = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let len = rng.gen_range(o.min_len..=o.max_len);
            let mut tokens: Vec<&str> = (0..len - 1)
                .map(|_| fillers.choose(&mut rng).expect("nonempty").as_str())
                .collect();
            let kw = keywords[label.class_index()].choose(&mut rng).expect("nonempty");
            tokens.insert(rng.gen_range(0..len), kw);
            LabeledText {
                doc_id: format!("synth-{i:05}"),
                label,
                text: tokens.join(" "),
            }
        })
        .collect();

    let mut table = EmbeddingTable::new(o.dim);
    let mut vocab: Vec<&String> = keywords.iter().flatten().chain(&fillers).collect();
    vocab.sort();
    for w in vocab {
        let v = (0..o.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        table.insert_word(w.clone(), v).expect("dimension matches");
    }

    Ok(SynthCorpus {
        docs,
        table,
        keywords,
        fillers,
    })
}
