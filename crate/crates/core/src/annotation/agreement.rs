use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{votes, AdjudicationConfig, Annotation, Round};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum KappaError {
    #[error("no items to score")]
    Empty,
    #[error("item {item} has {found} ratings, expected {expected}")]
    Ragged {
        item: usize,
        expected: usize,
        found: usize,
    },
    #[error("item {item} has {found} categories, expected {expected}")]
    CategoryMismatch {
        item: usize,
        expected: usize,
        found: usize,
    },
    #[error("fleiss' kappa needs at least 2 raters per item, got {0}")]
    TooFewRaters(usize),
}

/// Fleiss' kappa over a per-item category count matrix.
///
/// `counts[i][j]` is the number of raters who put item `i` in category `j`. Every
/// item must carry the same number of ratings. Returns `Ok(None)` when chance
/// agreement is 1 (every rating falls in a single category) and kappa is undefined.
pub fn fleiss_kappa<R: AsRef<[usize]>>(counts: &[R]) -> Result<Option<f64>, KappaError> {
    let first = counts.first().ok_or(KappaError::Empty)?.as_ref();
    let categories = first.len();
    let raters: usize = first.iter().sum();
    for (item, row) in counts.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != categories {
            return Err(KappaError::CategoryMismatch {
                item,
                expected: categories,
                found: row.len(),
            });
        }
        let found: usize = row.iter().sum();
        if found != raters {
            return Err(KappaError::Ragged {
                item,
                expected: raters,
                found,
            });
        }
    }
    if raters < 2 {
        return Err(KappaError::TooFewRaters(raters));
    }

    let items = counts.len() as f64;
    let n = raters as f64;

    let mean_item_agreement = counts
        .iter()
        .map(|row| {
            let sq: usize = row.as_ref().iter().map(|&c| c * c).sum();
            (sq as f64 - n) / (n * (n - 1.0))
        })
        .sum::<f64>()
        / items;

    let chance: f64 = (0..categories)
        .map(|j| {
            let total: usize = counts.iter().map(|row| row.as_ref()[j]).sum();
            let p = total as f64 / (items * n);
            p * p
        })
        .sum();

    if chance >= 1.0 {
        return Ok(None);
    }
    Ok(Some((mean_item_agreement - chance) / (1.0 - chance)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfAgreement {
    pub per_annotator: BTreeMap<String, f64>,
    /// Pooled over every probe; `None` when there are no probes.
    pub overall: Option<f64>,
    pub probes: usize,
}

/// Consistency of each annotator with their own repeated round-1 labels.
///
/// A probe is a document that one annotator labeled at least twice in round 1. It
/// counts as consistent when all of that annotator's labels on it coincide.
pub fn self_agreement(annotations: &[Annotation]) -> SelfAgreement {
    let mut by_pair: BTreeMap<(&str, &str), Vec<crate::Polarity>> = BTreeMap::new();
    for a in annotations.iter().filter(|a| a.round == Round::One) {
        by_pair
            .entry((a.annotator_id.as_str(), a.doc_id.as_str()))
            .or_default()
            .push(a.label);
    }

    let mut tallies: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for ((annotator, _), labels) in &by_pair {
        if labels.len() < 2 {
            continue;
        }
        let entry = tallies.entry(annotator).or_default();
        entry.1 += 1;
        if labels.iter().all(|&l| l == labels[0]) {
            entry.0 += 1;
        }
    }

    let (consistent, probes) = tallies
        .values()
        .fold((0, 0), |(c, p), &(ci, pi)| (c + ci, p + pi));
    SelfAgreement {
        per_annotator: tallies
            .into_iter()
            .map(|(a, (c, p))| (a.to_string(), c as f64 / p as f64))
            .collect(),
        overall: (probes > 0).then(|| consistent as f64 / probes as f64),
        probes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// `None` marks the degenerate case where chance agreement is 1.
    pub fleiss_kappa: Option<f64>,
    /// Fraction of fully annotated documents whose round-1 labels are unanimous.
    /// `None` when no document has a complete round 1.
    pub raw_interagreement: Option<f64>,
    pub items: usize,
    pub self_agreement: BTreeMap<String, f64>,
    pub overall_self_agreement: Option<f64>,
}

/// Agreement over every document whose round 1 is complete.
///
/// Each such document contributes the first `annotators_per_item` distinct
/// annotators' round-1 labels.
pub fn agreement_report(annotations: &[Annotation], config: &AdjudicationConfig) -> AgreementReport {
    let need = config.annotators_per_item;
    let mut by_doc: BTreeMap<&str, Vec<&Annotation>> = BTreeMap::new();
    for a in annotations {
        by_doc.entry(a.doc_id.as_str()).or_default().push(a);
    }

    let mut matrix = Vec::new();
    for anns in by_doc.values() {
        let labels = votes(anns.iter().copied(), Round::One);
        if labels.len() < need {
            continue;
        }
        let mut row = [0usize; 3];
        for l in &labels[..need] {
            row[l.class_index()] += 1;
        }
        matrix.push(row);
    }

    let unanimous = matrix.iter().filter(|row| row.contains(&need)).count();
    let kappa = if matrix.is_empty() {
        None
    } else {
        fleiss_kappa(&matrix).expect("rows are complete by construction")
    };
    let selfs = self_agreement(annotations);

    AgreementReport {
        fleiss_kappa: kappa,
        raw_interagreement: (!matrix.is_empty()).then(|| unanimous as f64 / matrix.len() as f64),
        items: matrix.len(),
        self_agreement: selfs.per_annotator,
        overall_self_agreement: selfs.overall,
    }
}

/// Count matrix from per-item lists of category indices.
pub fn count_matrix(ratings: &[Vec<usize>], categories: usize) -> Vec<Vec<usize>> {
    ratings
        .iter()
        .map(|item| {
            let mut row = vec![0; categories];
            for &r in item {
                row[r] += 1;
            }
            row
        })
        .collect()
}
