//! Two-round labeling protocol, adjudication and agreement statistics.
//!
//! Each document is labeled by `annotators_per_item` annotators in round 1. A
//! unanimous or strict-majority label becomes gold; anything else goes to round 2,
//! where a strict majority decides and a failed vote removes the document.

mod agreement;
mod engine;

use std::collections::HashSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{GoldRecord, Provenance};
use crate::Polarity;

pub use agreement::{
    agreement_report, count_matrix, fleiss_kappa, self_agreement, AgreementReport, KappaError, SelfAgreement,
};
pub use engine::{AnnotationEngine, DocStatus, EngineError, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Round {
    One,
    Two,
}

impl TryFrom<u8> for Round {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Round::One),
            2 => Ok(Round::Two),
            other => Err(format!("round must be 1 or 2, got {other}")),
        }
    }
}

impl From<Round> for u8 {
    fn from(r: Round) -> u8 {
        match r {
            Round::One => 1,
            Round::Two => 2,
        }
    }
}

/// One polarity judgment by one annotator in one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotator_id: String,
    pub doc_id: String,
    pub label: Polarity,
    pub round: Round,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdjudicationConfig {
    pub annotators_per_item: usize,
    /// Share of round-1 tasks that re-serve an already labeled document to the same
    /// annotator, for self-agreement.
    pub probe_fraction: f64,
    pub seed: u64,
}

impl Default for AdjudicationConfig {
    fn default() -> Self {
        Self {
            annotators_per_item: 3,
            probe_fraction: 0.05,
            seed: 0,
        }
    }
}

impl AdjudicationConfig {
    pub fn validate(&self) -> Result<(), AnnotationError> {
        if self.annotators_per_item < 2 {
            return Err(AnnotationError::Config(format!(
                "annotators_per_item must be at least 2, got {}",
                self.annotators_per_item
            )));
        }
        if !(0.0..=1.0).contains(&self.probe_fraction) {
            return Err(AnnotationError::Config(format!(
                "probe_fraction must lie in [0, 1], got {}",
                self.probe_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Adjudication {
    Gold(GoldRecord),
    NeedsRound2,
    Removed,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AnnotationError {
    #[error("document `{doc_id}` has {have} of {need} round-{round} annotations")]
    Incomplete {
        doc_id: String,
        round: u8,
        have: usize,
        need: usize,
    },
    #[error("annotation for `{found}` passed while adjudicating `{expected}`")]
    ForeignDocument { expected: String, found: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// First label of each distinct annotator in `round`, in submission order.
///
/// Repeated labels by one annotator (self-agreement probes) do not add votes.
pub(crate) fn votes<'a>(annotations: impl IntoIterator<Item = &'a Annotation>, round: Round) -> Vec<Polarity> {
    let mut seen = HashSet::new();
    annotations
        .into_iter()
        .filter(|a| a.round == round && seen.insert(a.annotator_id.as_str()))
        .map(|a| a.label)
        .collect()
}

/// Most frequent label and its count. Ties resolve to the lower label, which never
/// matters for the strict-majority rule.
fn plurality(labels: &[Polarity]) -> Option<(Polarity, usize)> {
    let mut counts = [0usize; 3];
    for l in labels {
        counts[l.class_index()] += 1;
    }
    let (idx, &count) = counts.iter().enumerate().max_by_key(|&(i, c)| (c, std::cmp::Reverse(i)))?;
    (count > 0).then(|| (Polarity::from_class_index(idx).expect("three classes"), count))
}

/// Decides a document from all of its annotations.
pub fn adjudicate(
    doc_id: &str,
    annotations: &[Annotation],
    config: &AdjudicationConfig,
) -> Result<Adjudication, AnnotationError> {
    config.validate()?;
    if let Some(a) = annotations.iter().find(|a| a.doc_id != doc_id) {
        return Err(AnnotationError::ForeignDocument {
            expected: doc_id.to_string(),
            found: a.doc_id.clone(),
        });
    }
    let need = config.annotators_per_item;

    let first = votes(annotations, Round::One);
    if first.len() < need {
        return Err(AnnotationError::Incomplete {
            doc_id: doc_id.to_string(),
            round: 1,
            have: first.len(),
            need,
        });
    }
    let (label, count) = plurality(&first).expect("nonempty round");
    if count == first.len() {
        return Ok(Adjudication::Gold(GoldRecord::new(doc_id, label, Provenance::UnanimousR1)));
    }
    if 2 * count > first.len() {
        return Ok(Adjudication::Gold(GoldRecord::new(doc_id, label, Provenance::MajorityR1)));
    }

    let second = votes(annotations, Round::Two);
    if second.is_empty() {
        return Ok(Adjudication::NeedsRound2);
    }
    if second.len() < need {
        return Err(AnnotationError::Incomplete {
            doc_id: doc_id.to_string(),
            round: 2,
            have: second.len(),
            need,
        });
    }
    let (label, count) = plurality(&second).expect("nonempty round");
    if 2 * count > second.len() {
        Ok(Adjudication::Gold(GoldRecord::new(doc_id, label, Provenance::MajorityR2)))
    } else {
        Ok(Adjudication::Removed)
    }
}
