//! The five classifier architectures, their training loop and checkpoints.
//!
//! Every network reads a `padded_length x embedding_dim` document matrix and ends
//! in a three-way softmax whose class indices map to polarity as `{0: -1, 1: 0,
//! 2: +1}`. Embedding rows are inputs, never trained.

mod checkpoint;
mod network;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::neural::NeuralError;

pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint, CHECKPOINT_VERSION};
pub use network::{predict, Model, Prediction};
pub use train::{evaluate_loss, train, EpochRecord, Example, TrainingTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "cnn")]
    Cnn,
    #[serde(rename = "lstm")]
    Lstm,
    #[serde(rename = "cnn_gru")]
    CnnGru,
    #[serde(rename = "bigru")]
    BiGru,
    #[serde(rename = "bilstm")]
    BiLstm,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Cnn,
        Architecture::Lstm,
        Architecture::CnnGru,
        Architecture::BiGru,
        Architecture::BiLstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Cnn => "cnn",
            Architecture::Lstm => "lstm",
            Architecture::CnnGru => "cnn_gru",
            Architecture::BiGru => "bigru",
            Architecture::BiLstm => "bilstm",
        }
    }

    pub fn uses_convolution(self) -> bool {
        matches!(self, Architecture::Cnn | Architecture::CnnGru)
    }

    /// What each entry of `dropout_rates` applies to, in order.
    pub fn dropout_slots(self) -> &'static [&'static str] {
        match self {
            Architecture::Cnn => &["after pooling"],
            Architecture::Lstm => &["after first LSTM", "after second LSTM"],
            Architecture::CnnGru => &["after convolution", "after GRU", "before dense"],
            Architecture::BiGru => &["spatial, on embeddings"],
            Architecture::BiLstm => &["after BiLSTM"],
        }
    }

    /// Number of entries `hidden_dims` must have.
    pub fn recurrent_layers(self) -> usize {
        match self {
            Architecture::Cnn => 0,
            Architecture::Lstm => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cnn" => Ok(Architecture::Cnn),
            "lstm" => Ok(Architecture::Lstm),
            "cnn_gru" => Ok(Architecture::CnnGru),
            "bigru" => Ok(Architecture::BiGru),
            "bilstm" => Ok(Architecture::BiLstm),
            _ => Err(ModelError::UnknownArchitecture(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_size: Option<usize>,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    pub dropout_rates: Vec<f64>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Hyperparameters {
    /// The tabled configuration of each architecture.
    pub fn defaults(arch: Architecture) -> Self {
        match arch {
            Architecture::Cnn => Self {
                filters: Some(128),
                filter_size: Some(3),
                hidden_dims: vec![],
                dropout_rates: vec![0.5],
                learning_rate: 0.001,
                epochs: 5,
                batch_size: 8,
            },
            Architecture::Lstm => Self {
                filters: None,
                filter_size: None,
                hidden_dims: vec![128, 64],
                dropout_rates: vec![0.4, 0.4],
                learning_rate: 0.001,
                epochs: 5,
                batch_size: 128,
            },
            Architecture::CnnGru => Self {
                filters: Some(64),
                filter_size: Some(3),
                hidden_dims: vec![64],
                dropout_rates: vec![0.2, 0.3, 0.5],
                learning_rate: 0.001,
                epochs: 5,
                batch_size: 256,
            },
            Architecture::BiGru => Self {
                filters: None,
                filter_size: None,
                hidden_dims: vec![64],
                dropout_rates: vec![0.3],
                learning_rate: 0.001,
                epochs: 6,
                batch_size: 256,
            },
            Architecture::BiLstm => Self {
                filters: None,
                filter_size: None,
                hidden_dims: vec![40],
                dropout_rates: vec![0.4],
                learning_rate: 0.008,
                epochs: 5,
                batch_size: 256,
            },
        }
    }

    /// Same stack with every filter count and hidden size set to `width`.
    pub fn narrowed(mut self, width: usize) -> Self {
        if self.filters.is_some() {
            self.filters = Some(width);
        }
        for h in &mut self.hidden_dims {
            *h = width;
        }
        self
    }

    pub fn apply(&mut self, o: &HyperparameterOverrides) {
        if let Some(v) = o.filters {
            self.filters = Some(v);
        }
        if let Some(v) = o.filter_size {
            self.filter_size = Some(v);
        }
        if let Some(v) = &o.hidden_dims {
            self.hidden_dims = v.clone();
        }
        if let Some(v) = &o.dropout_rates {
            self.dropout_rates = v.clone();
        }
        if let Some(v) = o.learning_rate {
            self.learning_rate = v;
        }
        if let Some(v) = o.epochs {
            self.epochs = v;
        }
        if let Some(v) = o.batch_size {
            self.batch_size = v;
        }
    }
}

/// Partial hyperparameters read from a user file and layered over the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperparameterOverrides {
    pub filters: Option<usize>,
    pub filter_size: Option<usize>,
    pub hidden_dims: Option<Vec<usize>>,
    pub dropout_rates: Option<Vec<f64>>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub hyperparameters: Hyperparameters,
    pub seed: u64,
    pub padded_length: usize,
    pub embedding_dim: usize,
}

impl ModelConfig {
    pub fn new(architecture: Architecture, padded_length: usize, embedding_dim: usize) -> Self {
        Self {
            architecture,
            hyperparameters: Hyperparameters::defaults(architecture),
            seed: 0,
            padded_length,
            embedding_dim,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let h = &self.hyperparameters;
        let arch = self.architecture;
        let bad = |m: String| Err(ModelError::Config(format!("{arch}: {m}")));
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        if self.padded_length == 0 {
            return bad("padded_length must be positive".into());
        }
        if arch.uses_convolution() {
            match (h.filters, h.filter_size) {
                (Some(f), Some(s)) if f > 0 && s > 0 => {
                    if self.padded_length < s {
                        return bad(format!("padded_length {} is below filter_size {s}", self.padded_length));
                    }
                }
                _ => return bad("filters and filter_size must be positive".into()),
            }
        } else if h.filters.is_some() || h.filter_size.is_some() {
            return bad("filters/filter_size are not used by this architecture".into());
        }
        if h.hidden_dims.len() != arch.recurrent_layers() || h.hidden_dims.contains(&0) {
            return bad(format!(
                "hidden_dims must hold {} positive sizes, got {:?}",
                arch.recurrent_layers(),
                h.hidden_dims
            ));
        }
        if h.dropout_rates.len() != arch.dropout_slots().len() {
            return bad(format!(
                "dropout_rates must hold {} rates ({}), got {:?}",
                arch.dropout_slots().len(),
                arch.dropout_slots().join(", "),
                h.dropout_rates
            ));
        }
        if let Some(r) = h.dropout_rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return bad(format!("dropout rate {r} outside [0, 1)"));
        }
        if !(h.learning_rate.is_finite() && h.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", h.learning_rate));
        }
        if h.epochs == 0 || h.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        Ok(())
    }
}

/// 99th percentile of document lengths, raised to `min_len`.
pub fn percentile_length(lengths: &[usize], min_len: usize) -> usize {
    if lengths.is_empty() {
        return min_len.max(1);
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let rank = ((0.99 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1].max(min_len).max(1)
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("unknown architecture `{0}` (expected cnn, lstm, cnn_gru, bigru or bilstm)")]
    UnknownArchitecture(String),
    #[error("document matrix is {found:?}, model expects {expected:?}")]
    Dimension {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: corrupt checkpoint: {message}")]
    Corrupt { path: String, message: String },
    #[error("{path}: checkpoint format version {found}, this build reads version {expected}")]
    Version { path: String, found: u64, expected: u32 },
    #[error("checkpoint was trained against embedding table {expected}, got {found}")]
    Fingerprint { expected: String, found: String },
}
