//! Hand-differentiated layers, recurrent cells and the Adam optimizer.
//!
//! Every layer works on one example at a time. Forward passes return whatever the
//! backward pass needs; backward passes accumulate into [`Param::grad`] and return
//! the gradient with respect to the layer input.

mod adam;
mod gradcheck;
mod layers;
mod recurrent;
mod tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use adam::Adam;
pub use gradcheck::{gradient_check, relative_error, Differentiable, GRADCHECK_DELTA};
pub use layers::{
    global_max_pool, global_max_pool_backward, relu, relu_backward, softmax, softmax_cross_entropy, Conv1d, Dense,
    Dropout,
};
pub use recurrent::{Bidirectional, BidirectionalCache, Gru, GruCache, Lstm, LstmCache, Recurrent};
pub use tensor::{axpy, dot, Tensor2};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NeuralError {
    #[error("sequence of {len} rows is shorter than filter size {size}")]
    SequenceTooShort { len: usize, size: usize },
    #[error("pooling over an empty sequence")]
    EmptySequence,
    #[error("dropout rate {0} outside [0, 1)")]
    DropoutRate(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// A trainable tensor with its accumulated gradient. The two always share a shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor2,
    pub grad: Tensor2,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor2) -> Self {
        let grad = Tensor2::zeros(value.rows(), value.cols());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Whether dropout is active. Training mode carries the mask generator.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Independent generator for a named stream under one seed.
pub fn stream_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Shape summary of a layer, for introspection of built models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d { filters: usize, size: usize },
    Relu,
    GlobalMaxPool,
    Dropout { rate: f64 },
    SpatialDropout { rate: f64 },
    Lstm { hidden: usize, return_sequences: bool },
    Gru { hidden: usize },
    BiGru { hidden: usize },
    BiLstm { hidden: usize },
    Dense { units: usize },
    Softmax,
}
