use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Model, ModelError};
use crate::embedding::DocumentMatrix;
use crate::neural::{softmax_cross_entropy, stream_rng, Adam, Mode};
use crate::Polarity;

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub doc: DocumentMatrix,
    pub label: Polarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// `None` when no validation set was given.
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    /// Wall-clock seconds spent on the optimizer pass of this epoch.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochRecord>,
    pub optimizer_steps: u64,
}

impl TrainingTrace {
    pub fn mean_epoch_seconds(&self) -> f64 {
        if self.epochs.is_empty() {
            return 0.0;
        }
        self.epochs.iter().map(|e| e.seconds).sum::<f64>() / self.epochs.len() as f64
    }

    /// `epoch,train_loss,train_acc,val_loss,val_acc,seconds`; missing validation
    /// values are empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "seconds"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.train_acc.to_string(),
                opt(e.val_loss),
                opt(e.val_acc),
                e.seconds.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean cross-entropy and accuracy with dropout disabled.
pub fn evaluate_loss(model: &Model, examples: &[Example]) -> Result<(f64, f64), ModelError> {
    if examples.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for ex in examples {
        let logits = model.logits(&ex.doc)?;
        loss += softmax_cross_entropy(&logits, ex.label.class_index()).0;
        let best = (0..3).fold(0, |b, k| if logits[k] > logits[b] { k } else { b });
        correct += usize::from(best == ex.label.class_index());
    }
    let n = examples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch Adam for the configured number of epochs.
///
/// The example order is reshuffled every epoch and dropout masks are drawn from the
/// same seeded stream, so a fixed seed reproduces the run exactly. Per-epoch loss and
/// accuracy are measured after the epoch in evaluation mode.
pub fn train(model: &mut Model, train: &[Example], val: &[Example]) -> Result<TrainingTrace, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    for ex in train.iter().chain(val) {
        model.check_input(&ex.doc)?;
    }
    let hp = model.config().hyperparameters.clone();
    let mut rng = stream_rng(model.config().seed, "train");
    let mut adam = Adam::new(hp.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = TrainingTrace::default();

    for epoch in 1..=hp.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        for batch in order.chunks(hp.batch_size) {
            model.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = &train[i];
                let (logits, cache) = model.forward(&ex.doc, &mut Mode::Train(&mut rng))?;
                let (loss, mut grad) = softmax_cross_entropy(&logits, ex.label.class_index());
                if !loss.is_finite() {
                    return Err(ModelError::NonFiniteLoss { epoch });
                }
                for g in &mut grad {
                    *g *= scale;
                }
                model.backward(&ex.doc, &cache, &grad);
            }
            adam.step(&mut model.params_mut());
        }
        let seconds = started.elapsed().as_secs_f64();

        let (train_loss, train_acc) = evaluate_loss(model, train)?;
        if !train_loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        let (val_loss, val_acc) = if val.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate_loss(model, val)?;
            (Some(l), Some(a))
        };
        log::info!("{} epoch {epoch}: loss {train_loss:.4} acc {train_acc:.4}", model.architecture());
        trace.epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
            seconds,
        });
    }
    trace.optimizer_steps = adam.steps();
    Ok(trace)
}
