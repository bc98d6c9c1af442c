//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

pub mod grad;
pub mod runs;

use std::collections::{BTreeMap, HashSet};

use opinion_core::embedding::EmbeddingTable;
use rand::Rng;

/// Fleiss' kappa evaluated directly from its definition on a list of per-item
/// rating vectors (category index per rater), without a count matrix.
pub fn kappa_brute_force(ratings: &[Vec<usize>], categories: usize) -> Option<f64> {
    let items = ratings.len() as f64;
    let n = ratings[0].len() as f64;
    let mut p_bar = 0.0;
    for item in ratings {
        // ordered pairs of distinct raters that agree
        let mut agreeing = 0usize;
        for a in 0..item.len() {
            for b in 0..item.len() {
                if a != b && item[a] == item[b] {
                    agreeing += 1;
                }
            }
        }
        p_bar += agreeing as f64 / (n * (n - 1.0));
    }
    p_bar /= items;
    let mut p_e = 0.0;
    for j in 0..categories {
        let count = ratings.iter().flatten().filter(|&&c| c == j).count() as f64;
        let p = count / (items * n);
        p_e += p * p;
    }
    if (p_e - 1.0).abs() < 1e-15 {
        None
    } else {
        Some((p_bar - p_e) / (1.0 - p_e))
    }
}

pub fn random_ratings<R: Rng>(rng: &mut R, items: usize, raters: usize, categories: usize) -> Vec<Vec<usize>> {
    (0..items)
        .map(|_| (0..raters).map(|_| rng.gen_range(0..categories)).collect())
        .collect()
}

/// OOV vector by scanning every stored n-gram and keeping those that occur in
/// `<token>` with a length inside the table's range.
pub fn oov_brute_force(table: &EmbeddingTable, token: &str) -> Vec<f64> {
    let wrapped: Vec<char> = format!("<{token}>").chars().collect();
    let (min, max) = table.ngram_range();
    let mut substrings = HashSet::new();
    for i in 0..wrapped.len() {
        for j in i + 1..=wrapped.len() {
            substrings.insert(wrapped[i..j].iter().collect::<String>());
        }
    }
    let mut sum = vec![0.0; table.dim()];
    for (gram, v) in table.ngrams() {
        let len = gram.chars().count();
        if (min..=max).contains(&len) && substrings.contains(gram) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
        }
    }
    sum
}

/// Random table over a small alphabet so that n-gram hits are frequent.
pub fn random_table<R: Rng>(rng: &mut R) -> (EmbeddingTable, Vec<String>) {
    const ALPHABET: [char; 5] = ['ا', 'ب', 'پ', 'ت', 'س'];
    let dim = rng.gen_range(1..=6);
    let min = rng.gen_range(1..=4);
    let max = rng.gen_range(min..=6);
    let mut table = EmbeddingTable::new(dim).with_ngram_range(min, max).unwrap();
    let word = |rng: &mut R, len: usize| -> String { (0..len).map(|_| ALPHABET[rng.gen_range(0..5)]).collect() };
    let mut grams = BTreeMap::new();
    for _ in 0..rng.gen_range(5..40) {
        let len = rng.gen_range(1..=7);
        let mut g = word(rng, len);
        match rng.gen_range(0..4) {
            0 => g.insert(0, '<'),
            1 => g.push('>'),
            _ => {}
        }
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        grams.insert(g, v);
    }
    for (g, v) in grams {
        table.insert_ngram(g, v).unwrap();
    }
    let tokens = (0..10)
        .map(|_| {
            let len = rng.gen_range(1..=8);
            word(rng, len)
        })
        .collect();
    (table, tokens)
}

/// `(input, expected tokens)` pairs from the hand-derived normalizer fixture.
pub fn golden_normalizer_cases() -> Vec<(String, Vec<String>)> {
    let text = include_str!("../fixtures/normalizer_golden.tsv");
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let (input, expected) = l.split_once('\t').expect("tab-separated fixture line");
            let tokens = expected.split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect();
            (input.to_string(), tokens)
        })
        .collect()
}

/// Random colloquial-looking text: Persian and Latin letters, Arabic letterforms,
/// digits in three scripts, emoji runs, URLs, mentions, hashtags, punctuation,
/// zero-width characters and elongations.
pub fn fuzz_text<R: Rng>(rng: &mut R) -> String {
    const PIECES: [&str; 40] = [
        "سلام", "خیلی", "عالی", "می\u{200C}روم", "كتاب", "علي", "مصطفى", "ســلام", "کِتاب", "\u{0627}\u{0653}",
        "hello", "soooo", "e\u{0301}", "😊", "😂👍", "❤️", "❤️\u{200D}🔥", "👍🏽", "\u{1FAFF}", "🇮🇷",
        "http://t.co/x", "www.a.ir", "@user", "#تگ", "#", "۱۲۳", "٤٥", "12.5", "14:30", "1399/01/15",
        "!", "؟", "،", "...", "«", "»", "_", "\u{200B}", "ییییی", "ههههه",
    ];
    let n = rng.gen_range(0..12);
    let mut s = String::new();
    for _ in 0..n {
        s.push_str(PIECES[rng.gen_range(0..PIECES.len())]);
        match rng.gen_range(0..4) {
            0 => {}
            1 => s.push('\t'),
            _ => s.push(' '),
        }
        if rng.gen_bool(0.05) {
            s.push(char::from_u32(rng.gen_range(0x20..0x3000)).unwrap_or(' '));
        }
    }
    s
}

/// Per-item category counts built by direct tallying.
pub fn counts_of(ratings: &[Vec<usize>], categories: usize) -> Vec<Vec<usize>> {
    ratings
        .iter()
        .map(|item| (0..categories).map(|j| item.iter().filter(|&&c| c == j).count()).collect())
        .collect()
}

/// Expected outcome of two-round adjudication, with labels as class indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    UnanimousR1(usize),
    MajorityR1(usize),
    MajorityR2(usize),
    NeedsRound2,
    Removed,
}

fn strict_majority(labels: &[usize]) -> Option<usize> {
    (0..3).find(|&l| 2 * labels.iter().filter(|&&x| x == l).count() > labels.len())
}

/// Round 1 decides on unanimity or strict majority. Otherwise round 2, once
/// present, decides on strict majority or removes the document.
pub fn adjudication_oracle(round1: &[usize], round2: Option<&[usize]>) -> Verdict {
    if round1.iter().all(|&l| l == round1[0]) {
        return Verdict::UnanimousR1(round1[0]);
    }
    if let Some(l) = strict_majority(round1) {
        return Verdict::MajorityR1(l);
    }
    match round2 {
        None => Verdict::NeedsRound2,
        Some(r2) => strict_majority(r2).map_or(Verdict::Removed, Verdict::MajorityR2),
    }
}

/// Every label vector of length `n` over three classes.
pub fn all_label_vectors(n: usize) -> Vec<Vec<usize>> {
    (0..3usize.pow(n as u32))
        .map(|mut code| {
            (0..n)
                .map(|_| {
                    let l = code % 3;
                    code /= 3;
                    l
                })
                .collect()
        })
        .collect()
}

/// Per-class precision, recall and f1 plus accuracy from paired labels, with 0 for
/// any empty denominator.
pub fn metrics_oracle(gold: &[usize], predicted: &[usize]) -> ([(f64, f64, f64); 3], f64) {
    let mut per_class = [(0.0, 0.0, 0.0); 3];
    for (c, slot) in per_class.iter_mut().enumerate() {
        let pairs = gold.iter().zip(predicted);
        let tp = pairs.clone().filter(|&(&g, &p)| g == c && p == c).count() as f64;
        let predicted_c = predicted.iter().filter(|&&p| p == c).count() as f64;
        let gold_c = gold.iter().filter(|&&g| g == c).count() as f64;
        let precision = if predicted_c > 0.0 { tp / predicted_c } else { 0.0 };
        let recall = if gold_c > 0.0 { tp / gold_c } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        *slot = (precision, recall, f1);
    }
    let correct = gold.iter().zip(predicted).filter(|(g, p)| g == p).count() as f64;
    (per_class, correct / gold.len() as f64)
}
