use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{adjudicate, agreement_report, votes, Adjudication, AdjudicationConfig, AgreementReport, Annotation, AnnotationError, Round};
use crate::corpus::GoldRecord;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("unknown annotator `{0}`")]
    UnknownAnnotator(String),
    #[error("unknown document `{0}`")]
    UnknownDocument(String),
    #[error("`{annotator}` already labeled `{doc_id}` in round {round}")]
    Duplicate {
        annotator: String,
        doc_id: String,
        round: u8,
    },
    #[error("document `{doc_id}` is not open for round {round}")]
    NotOpen { doc_id: String, round: u8 },
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}

/// A document served to an annotator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub doc_id: String,
    pub round: Round,
    /// Re-served for self-agreement; the annotator has labeled it before.
    pub probe: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DocStatus {
    /// Round 1 still collecting labels.
    Open { ratings: usize },
    Gold(GoldRecord),
    NeedsRound2 { ratings: usize },
    Removed,
}

/// Task scheduling and protocol checks for the two-round workflow.
///
/// The engine holds the annotation set in memory. Persistence is the caller's job:
/// check with [`AnnotationEngine::check`], persist, then [`AnnotationEngine::record`].
#[derive(Debug, Clone)]
pub struct AnnotationEngine {
    config: AdjudicationConfig,
    annotators: BTreeSet<String>,
    docs: BTreeMap<String, Vec<Annotation>>,
    /// Outstanding task per (annotator, round).
    served: HashMap<(String, Round), Task>,
}

impl AnnotationEngine {
    pub fn new<I, S>(config: AdjudicationConfig, doc_ids: I) -> Result<Self, EngineError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        config.validate()?;
        Ok(Self {
            config,
            annotators: BTreeSet::new(),
            docs: doc_ids.into_iter().map(|d| (d.into(), Vec::new())).collect(),
            served: HashMap::new(),
        })
    }

    /// Replays previously persisted annotations without protocol checks. Annotators
    /// seen in the history are registered.
    pub fn replay<'a>(&mut self, history: impl IntoIterator<Item = &'a Annotation>) {
        for a in history {
            self.annotators.insert(a.annotator_id.clone());
            self.docs.entry(a.doc_id.clone()).or_default().push(a.clone());
        }
    }

    pub fn config(&self) -> &AdjudicationConfig {
        &self.config
    }

    pub fn register(&mut self, annotator: impl Into<String>) {
        self.annotators.insert(annotator.into());
    }

    pub fn is_registered(&self, annotator: &str) -> bool {
        self.annotators.contains(annotator)
    }

    pub fn add_document(&mut self, doc_id: impl Into<String>) {
        self.docs.entry(doc_id.into()).or_default();
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.docs.keys().map(String::as_str)
    }

    pub fn annotations(&self) -> impl Iterator<Item = &Annotation> {
        self.docs.values().flatten()
    }

    fn ratings(&self, doc: &[Annotation], round: Round) -> usize {
        votes(doc, round).len()
    }

    fn has_labeled(doc: &[Annotation], annotator: &str, round: Round) -> bool {
        doc.iter().any(|a| a.round == round && a.annotator_id == annotator)
    }

    pub fn status(&self, doc_id: &str) -> Result<DocStatus, EngineError> {
        let anns = self
            .docs
            .get(doc_id)
            .ok_or_else(|| EngineError::UnknownDocument(doc_id.to_string()))?;
        Ok(self.status_of(doc_id, anns))
    }

    fn status_of(&self, doc_id: &str, anns: &[Annotation]) -> DocStatus {
        match adjudicate(doc_id, anns, &self.config) {
            Ok(Adjudication::Gold(g)) => DocStatus::Gold(g),
            Ok(Adjudication::NeedsRound2) => DocStatus::NeedsRound2 { ratings: 0 },
            Ok(Adjudication::Removed) => DocStatus::Removed,
            Err(AnnotationError::Incomplete { round: 1, have, .. }) => DocStatus::Open { ratings: have },
            Err(AnnotationError::Incomplete { round: 2, have, .. }) => DocStatus::NeedsRound2 { ratings: have },
            Err(e) => unreachable!("engine documents hold only their own annotations: {e}"),
        }
    }

    /// Outstanding serves of `doc_id` in `round` to annotators other than `annotator`.
    fn reserved_by_others(&self, doc_id: &str, round: Round, annotator: &str) -> usize {
        self.served
            .iter()
            .filter(|((who, r), t)| *r == round && who != annotator && t.doc_id == doc_id && !t.probe)
            .count()
    }

    /// Seed for the probe decision; depends only on the store state.
    fn probe_rng(&self, annotator: &str, labeled: usize) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.config.seed.to_le_bytes());
        h.update(annotator.as_bytes());
        h.update((labeled as u64).to_le_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    /// Next document for `annotator` in `round`, or `None` when nothing is left.
    ///
    /// Repeated calls return the same task until it is submitted or skipped. Round 1
    /// prefers documents with the fewest ratings, ties broken by id; with probability
    /// `probe_fraction` it instead re-serves a document this annotator already
    /// labeled once. Round 2 serves only documents that round 1 left undecided.
    pub fn next_task(&mut self, annotator: &str, round: Round) -> Result<Option<Task>, EngineError> {
        if !self.is_registered(annotator) {
            return Err(EngineError::UnknownAnnotator(annotator.to_string()));
        }
        let key = (annotator.to_string(), round);
        if let Some(task) = self.served.get(&key) {
            return Ok(Some(task.clone()));
        }
        let need = self.config.annotators_per_item;

        let task = match round {
            Round::One => {
                let labeled_once: Vec<&str> = self
                    .docs
                    .iter()
                    .filter(|(_, anns)| {
                        anns.iter()
                            .filter(|a| a.round == Round::One && a.annotator_id == annotator)
                            .count()
                            == 1
                    })
                    .map(|(id, _)| id.as_str())
                    .collect();
                let labeled_total = self
                    .annotations()
                    .filter(|a| a.round == Round::One && a.annotator_id == annotator)
                    .count();
                let mut rng = self.probe_rng(annotator, labeled_total);
                let roll: f64 = rng.gen();
                if roll < self.config.probe_fraction && !labeled_once.is_empty() {
                    let pick = labeled_once[rng.gen_range(0..labeled_once.len())];
                    Some(Task {
                        doc_id: pick.to_string(),
                        round,
                        probe: true,
                    })
                } else {
                    self.docs
                        .iter()
                        .filter(|(id, anns)| {
                            !Self::has_labeled(anns, annotator, Round::One)
                                && self.ratings(anns, Round::One) + self.reserved_by_others(id, round, annotator) < need
                        })
                        .min_by_key(|(id, anns)| (self.ratings(anns, Round::One), id.as_str()))
                        .map(|(id, _)| Task {
                            doc_id: id.clone(),
                            round,
                            probe: false,
                        })
                }
            }
            Round::Two => self
                .docs
                .iter()
                .filter(|(id, anns)| {
                    matches!(self.status_of(id, anns), DocStatus::NeedsRound2 { .. })
                        && !Self::has_labeled(anns, annotator, Round::Two)
                        && self.ratings(anns, Round::Two) + self.reserved_by_others(id, round, annotator) < need
                })
                .min_by_key(|(id, anns)| (self.ratings(anns, Round::Two), id.as_str()))
                .map(|(id, _)| Task {
                    doc_id: id.clone(),
                    round,
                    probe: false,
                }),
        };

        if let Some(t) = &task {
            self.served.insert(key, t.clone());
        }
        Ok(task)
    }

    /// Drops the outstanding task of `annotator` in `round` without labeling it.
    pub fn skip(&mut self, annotator: &str, round: Round) -> Option<Task> {
        self.served.remove(&(annotator.to_string(), round))
    }

    /// Validates a submission against the protocol without recording it.
    pub fn check(&self, a: &Annotation) -> Result<(), EngineError> {
        if !self.is_registered(&a.annotator_id) {
            return Err(EngineError::UnknownAnnotator(a.annotator_id.clone()));
        }
        let anns = self
            .docs
            .get(&a.doc_id)
            .ok_or_else(|| EngineError::UnknownDocument(a.doc_id.clone()))?;
        let round_no = u8::from(a.round);
        let served_probe = self
            .served
            .get(&(a.annotator_id.clone(), a.round))
            .is_some_and(|t| t.probe && t.doc_id == a.doc_id);
        if Self::has_labeled(anns, &a.annotator_id, a.round) {
            return if served_probe {
                Ok(())
            } else {
                Err(EngineError::Duplicate {
                    annotator: a.annotator_id.clone(),
                    doc_id: a.doc_id.clone(),
                    round: round_no,
                })
            };
        }
        let open = matches!(
            (self.status_of(&a.doc_id, anns), a.round),
            (DocStatus::Open { .. }, Round::One) | (DocStatus::NeedsRound2 { .. }, Round::Two)
        );
        if !open {
            return Err(EngineError::NotOpen {
                doc_id: a.doc_id.clone(),
                round: round_no,
            });
        }
        Ok(())
    }

    /// Records a checked annotation. Returns the document's new status.
    pub fn record(&mut self, a: Annotation) -> Result<DocStatus, EngineError> {
        self.check(&a)?;
        let key = (a.annotator_id.clone(), a.round);
        if self.served.get(&key).is_some_and(|t| t.doc_id == a.doc_id) {
            self.served.remove(&key);
        }
        let doc_id = a.doc_id.clone();
        self.docs.get_mut(&doc_id).expect("checked").push(a);
        self.status(&doc_id)
    }

    pub fn gold_records(&self) -> Vec<GoldRecord> {
        self.docs
            .iter()
            .filter_map(|(id, anns)| match self.status_of(id, anns) {
                DocStatus::Gold(g) => Some(g),
                _ => None,
            })
            .collect()
    }

    pub fn statuses(&self) -> BTreeMap<String, DocStatus> {
        self.docs
            .iter()
            .map(|(id, anns)| (id.clone(), self.status_of(id, anns)))
            .collect()
    }

    pub fn report(&self) -> AgreementReport {
        let all: Vec<Annotation> = self.annotations().cloned().collect();
        agreement_report(&all, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::tests::ann;
    use crate::Polarity::{self, *};

    fn engine(docs: &[&str], probe_fraction: f64) -> AnnotationEngine {
        let cfg = AdjudicationConfig {
            annotators_per_item: 3,
            probe_fraction,
            seed: 7,
        };
        let mut e = AnnotationEngine::new(cfg, docs.iter().copied()).unwrap();
        for who in ["p", "q", "r", "s"] {
            e.register(who);
        }
        e
    }

    fn label(e: &mut AnnotationEngine, who: &str, round: Round, l: Polarity) -> Option<String> {
        let task = e.next_task(who, round).unwrap()?;
        e.record(ann(who, &task.doc_id, l, round)).unwrap();
        Some(task.doc_id)
    }

    #[test]
    fn fresh_corpus_serves_lowest_id() {
        let mut e = engine(&["d2", "d1", "d3"], 0.0);
        assert_eq!(e.next_task("p", Round::One).unwrap().unwrap().doc_id, "d1");
        // repeated fetch returns the same task
        assert_eq!(e.next_task("p", Round::One).unwrap().unwrap().doc_id, "d1");
        // a reservation by p still leaves room for two more raters on d1
        assert_eq!(e.next_task("q", Round::One).unwrap().unwrap().doc_id, "d1");
    }

    #[test]
    fn fewest_ratings_first() {
        let mut e = engine(&["d1", "d2"], 0.0);
        label(&mut e, "p", Round::One, Positive);
        assert_eq!(e.next_task("q", Round::One).unwrap().unwrap().doc_id, "d2");
    }

    #[test]
    fn unknown_annotator() {
        let mut e = engine(&["d1"], 0.0);
        assert_eq!(
            e.next_task("nobody", Round::One),
            Err(EngineError::UnknownAnnotator("nobody".into()))
        );
    }

    #[test]
    fn exhausted_round_returns_none() {
        let mut e = engine(&["d1"], 0.0);
        for who in ["p", "q", "r"] {
            assert_eq!(label(&mut e, who, Round::One, Positive).as_deref(), Some("d1"));
        }
        for who in ["p", "q", "r", "s"] {
            assert_eq!(e.next_task(who, Round::One).unwrap(), None);
        }
        assert!(matches!(e.status("d1").unwrap(), DocStatus::Gold(_)));
    }

    #[test]
    fn round_two_serves_only_disputed() {
        let mut e = engine(&["d1", "d2"], 0.0);
        for (who, l1, l2) in [("p", Positive, Positive), ("q", Neutral, Positive), ("r", Negative, Positive)] {
            e.record(ann(who, "d1", l1, Round::One)).unwrap();
            e.record(ann(who, "d2", l2, Round::One)).unwrap();
        }
        assert_eq!(e.next_task("s", Round::Two).unwrap().unwrap().doc_id, "d1");
        assert_eq!(e.next_task("p", Round::Two).unwrap().unwrap().doc_id, "d1");
    }

    #[test]
    fn round_two_capacity_counts_reservations() {
        let mut e = engine(&["d1"], 0.0);
        for (who, l) in [("p", Positive), ("q", Neutral), ("r", Negative)] {
            e.record(ann(who, "d1", l, Round::One)).unwrap();
        }
        e.register("t");
        let served: Vec<Option<Task>> = ["p", "q", "r", "s"]
            .iter()
            .map(|w| e.next_task(w, Round::Two).unwrap())
            .collect();
        assert_eq!(served.iter().filter(|t| t.is_some()).count(), 3);
        assert!(served[3].is_none());
        assert!(e.skip("p", Round::Two).is_some());
        assert!(e.next_task("s", Round::Two).unwrap().is_some());
    }

    #[test]
    fn duplicates_rejected_unless_probe() {
        let mut e = engine(&["d1", "d2"], 0.0);
        e.record(ann("p", "d1", Positive, Round::One)).unwrap();
        assert!(matches!(
            e.record(ann("p", "d1", Positive, Round::One)),
            Err(EngineError::Duplicate { .. })
        ));

        let mut e = engine(&["d1"], 1.0);
        e.record(ann("p", "d1", Positive, Round::One)).unwrap();
        let t = e.next_task("p", Round::One).unwrap().unwrap();
        assert!(t.probe);
        assert_eq!(t.doc_id, "d1");
        e.record(ann("p", "d1", Neutral, Round::One)).unwrap();
        // probe repeats do not count as extra raters
        assert_eq!(e.status("d1").unwrap(), DocStatus::Open { ratings: 1 });
    }

    #[test]
    fn round_two_only_for_disputed_docs() {
        let mut e = engine(&["d1"], 0.0);
        assert!(matches!(
            e.record(ann("p", "d1", Positive, Round::Two)),
            Err(EngineError::NotOpen { round: 2, .. })
        ));
    }

    #[test]
    fn probe_schedule_is_deterministic() {
        let run = || {
            let mut e = engine(&["a", "b", "c", "d", "e", "f"], 0.3);
            let mut served = Vec::new();
            while let Some(t) = e.next_task("p", Round::One).unwrap() {
                served.push((t.doc_id.clone(), t.probe));
                e.record(ann("p", &t.doc_id, Positive, Round::One)).unwrap();
            }
            served
        };
        let first = run();
        assert_eq!(first, run());
        assert!(first.iter().filter(|(_, probe)| !probe).count() == 6);
    }
}
