use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::models::{Example, Model};
use crate::Polarity;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Metrics derived from a 3x3 confusion matrix whose rows are gold classes and
/// columns predicted classes, both in class-index order (-1, 0, +1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: [[usize; 3]; 3],
    pub total: usize,
    pub accuracy: f64,
    pub per_class: [ClassMetrics; 3],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    /// Zero denominators give 0 for the affected precision, recall or F1.
    pub fn from_confusion(confusion: [[usize; 3]; 3]) -> Result<Self, HarnessError> {
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(HarnessError::EmptyDataset);
        }
        let per_class = std::array::from_fn(|k| {
            let tp = confusion[k][k];
            let predicted: usize = (0..3).map(|g| confusion[g][k]).sum();
            let support: usize = confusion[k].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        });
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / 3.0;
        Ok(Self {
            confusion,
            total,
            accuracy: ratio((0..3).map(|k| confusion[k][k]).sum(), total),
            macro_precision: mean(|c| c.precision),
            macro_recall: mean(|c| c.recall),
            macro_f1: mean(|c| c.f1),
            per_class,
        })
    }

    pub fn from_labels(gold: &[Polarity], predicted: &[Polarity]) -> Result<Self, HarnessError> {
        if gold.len() != predicted.len() {
            return Err(HarnessError::Spec(format!(
                "{} gold labels but {} predictions",
                gold.len(),
                predicted.len()
            )));
        }
        let mut confusion = [[0usize; 3]; 3];
        for (g, p) in gold.iter().zip(predicted) {
            confusion[g.class_index()][p.class_index()] += 1;
        }
        Self::from_confusion(confusion)
    }
}

/// Scores `model` on labeled, encoded examples.
pub fn evaluate(model: &Model, dataset: &[Example]) -> Result<MetricsReport, HarnessError> {
    if dataset.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let mut gold = Vec::with_capacity(dataset.len());
    let mut predicted = Vec::with_capacity(dataset.len());
    for ex in dataset {
        gold.push(ex.label);
        predicted.push(model.predict_matrix(&ex.doc)?.label);
    }
    MetricsReport::from_labels(&gold, &predicted)
}
