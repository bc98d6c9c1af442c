use serde::{Deserialize, Serialize};

use super::{Architecture, ModelConfig, ModelError};
use crate::embedding::{DocumentMatrix, EmbeddingTable};
use crate::neural::{
    global_max_pool, global_max_pool_backward, relu, relu_backward, softmax, softmax_cross_entropy, stream_rng,
    Bidirectional, BidirectionalCache, Conv1d, Dense, Differentiable, Dropout, Gru, GruCache, LayerSpec, Lstm,
    LstmCache, Mode, Param, Recurrent, Tensor2,
};
use crate::Polarity;

const CLASSES: usize = 3;

#[derive(Debug, Clone)]
enum Net {
    Cnn {
        conv: Conv1d,
        drop: Dropout,
        dense: Dense,
    },
    Lstm {
        first: Lstm,
        drop1: Dropout,
        second: Lstm,
        drop2: Dropout,
        dense: Dense,
    },
    CnnGru {
        conv: Conv1d,
        drop_conv: Dropout,
        gru: Gru,
        drop_gru: Dropout,
        drop_dense: Dropout,
        dense: Dense,
    },
    BiGru {
        spatial: Dropout,
        rnn: Bidirectional<Gru>,
        dense: Dense,
    },
    BiLstm {
        rnn: Bidirectional<Lstm>,
        drop: Dropout,
        dense: Dense,
    },
}

/// Intermediate values of one forward pass, consumed by the backward pass.
pub(crate) enum Cache {
    Cnn {
        pre: Tensor2,
        argmax: Vec<usize>,
        mask: Option<Vec<f64>>,
        feat: Vec<f64>,
    },
    Lstm {
        len: usize,
        first: LstmCache,
        mask1: Option<Vec<f64>>,
        hidden1: Tensor2,
        second: LstmCache,
        mask2: Option<Vec<f64>>,
        feat: Vec<f64>,
    },
    CnnGru {
        pre: Tensor2,
        mask1: Option<Vec<f64>>,
        act: Tensor2,
        steps: usize,
        gru: GruCache,
        mask2: Option<Vec<f64>>,
        mask3: Option<Vec<f64>>,
        feat: Vec<f64>,
    },
    BiGru {
        input: Tensor2,
        rnn: BidirectionalCache<GruCache>,
        feat: Vec<f64>,
    },
    BiLstm {
        rnn: BidirectionalCache<LstmCache>,
        mask: Option<Vec<f64>>,
        feat: Vec<f64>,
    },
}

fn product(a: Option<&[f64]>, b: Option<&[f64]>) -> Option<Vec<f64>> {
    match (a, b) {
        (None, None) => None,
        (Some(m), None) | (None, Some(m)) => Some(m.to_vec()),
        (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| x * y).collect()),
    }
}

/// An initialized or trained classifier.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    net: Net,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Polarity,
    /// Indexed by class: negative, neutral, positive.
    pub probabilities: [f64; 3],
}

impl Prediction {
    fn from_logits(logits: &[f64]) -> Self {
        let p = softmax(logits);
        let mut best = 0;
        for k in 1..CLASSES {
            if p[k] > p[best] {
                best = k;
            }
        }
        Prediction {
            label: Polarity::from_class_index(best).expect("three classes"),
            probabilities: [p[0], p[1], p[2]],
        }
    }
}

impl Model {
    /// Initializes weights from `config.seed`; equal configs give identical weights.
    pub fn build(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = stream_rng(config.seed, "init");
        let h = &config.hyperparameters;
        let d = config.embedding_dim;
        let rates = &h.dropout_rates;
        let net = match config.architecture {
            Architecture::Cnn => {
                let filters = h.filters.expect("validated");
                let conv = Conv1d::new("conv", filters, h.filter_size.expect("validated"), d, &mut rng);
                Net::Cnn {
                    conv,
                    drop: Dropout::new(rates[0])?,
                    dense: Dense::new("dense", filters, CLASSES, &mut rng),
                }
            }
            Architecture::Lstm => {
                let (h1, h2) = (h.hidden_dims[0], h.hidden_dims[1]);
                Net::Lstm {
                    first: Lstm::new("lstm1", d, h1, &mut rng),
                    drop1: Dropout::new(rates[0])?,
                    second: Lstm::new("lstm2", h1, h2, &mut rng),
                    drop2: Dropout::new(rates[1])?,
                    dense: Dense::new("dense", h2, CLASSES, &mut rng),
                }
            }
            Architecture::CnnGru => {
                let filters = h.filters.expect("validated");
                let hidden = h.hidden_dims[0];
                Net::CnnGru {
                    conv: Conv1d::new("conv", filters, h.filter_size.expect("validated"), d, &mut rng),
                    drop_conv: Dropout::new(rates[0])?,
                    gru: Gru::new("gru", filters, hidden, &mut rng),
                    drop_gru: Dropout::new(rates[1])?,
                    drop_dense: Dropout::new(rates[2])?,
                    dense: Dense::new("dense", hidden, CLASSES, &mut rng),
                }
            }
            Architecture::BiGru => {
                let hidden = h.hidden_dims[0];
                Net::BiGru {
                    spatial: Dropout::new(rates[0])?,
                    rnn: Bidirectional {
                        forward: Gru::new("bigru.forward", d, hidden, &mut rng),
                        backward: Gru::new("bigru.backward", d, hidden, &mut rng),
                    },
                    dense: Dense::new("dense", 2 * hidden, CLASSES, &mut rng),
                }
            }
            Architecture::BiLstm => {
                let hidden = h.hidden_dims[0];
                Net::BiLstm {
                    rnn: Bidirectional {
                        forward: Lstm::new("bilstm.forward", d, hidden, &mut rng),
                        backward: Lstm::new("bilstm.backward", d, hidden, &mut rng),
                    },
                    drop: Dropout::new(rates[0])?,
                    dense: Dense::new("dense", 2 * hidden, CLASSES, &mut rng),
                }
            }
        };
        Ok(Self { config, net })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    /// The layer stack as built, from input to output.
    pub fn layers(&self) -> Vec<LayerSpec> {
        use LayerSpec as L;
        match &self.net {
            Net::Cnn { conv, drop, dense } => vec![
                L::Conv1d {
                    filters: conv.filters(),
                    size: conv.size,
                },
                L::Relu,
                L::GlobalMaxPool,
                L::Dropout { rate: drop.rate() },
                L::Dense { units: dense.units() },
                L::Softmax,
            ],
            Net::Lstm {
                first,
                drop1,
                second,
                drop2,
                dense,
            } => vec![
                L::Lstm {
                    hidden: first.hidden(),
                    return_sequences: true,
                },
                L::Dropout { rate: drop1.rate() },
                L::Lstm {
                    hidden: second.hidden(),
                    return_sequences: false,
                },
                L::Dropout { rate: drop2.rate() },
                L::Dense { units: dense.units() },
                L::Softmax,
            ],
            Net::CnnGru {
                conv,
                drop_conv,
                gru,
                drop_gru,
                drop_dense,
                dense,
            } => vec![
                L::Conv1d {
                    filters: conv.filters(),
                    size: conv.size,
                },
                L::Relu,
                L::Dropout { rate: drop_conv.rate() },
                L::Gru { hidden: gru.hidden() },
                L::Dropout { rate: drop_gru.rate() },
                L::Dropout {
                    rate: drop_dense.rate(),
                },
                L::Dense { units: dense.units() },
                L::Softmax,
            ],
            Net::BiGru { spatial, rnn, dense } => vec![
                L::SpatialDropout { rate: spatial.rate() },
                L::BiGru { hidden: rnn.hidden() },
                L::Dense { units: dense.units() },
                L::Softmax,
            ],
            Net::BiLstm { rnn, drop, dense } => vec![
                L::BiLstm { hidden: rnn.hidden() },
                L::Dropout { rate: drop.rate() },
                L::Dense { units: dense.units() },
                L::Softmax,
            ],
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match &self.net {
            Net::Cnn { conv, dense, .. } => [conv.params(), dense.params()].concat(),
            Net::Lstm {
                first, second, dense, ..
            } => [first.params(), second.params(), dense.params()].concat(),
            Net::CnnGru { conv, gru, dense, .. } => [conv.params(), gru.params(), dense.params()].concat(),
            Net::BiGru { rnn, dense, .. } => [rnn.params(), dense.params()].concat(),
            Net::BiLstm { rnn, dense, .. } => [rnn.params(), dense.params()].concat(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        match &mut self.net {
            Net::Cnn { conv, dense, .. } => {
                out.extend(conv.params_mut());
                out.extend(dense.params_mut());
            }
            Net::Lstm {
                first, second, dense, ..
            } => {
                out.extend(first.params_mut());
                out.extend(second.params_mut());
                out.extend(dense.params_mut());
            }
            Net::CnnGru { conv, gru, dense, .. } => {
                out.extend(conv.params_mut());
                out.extend(gru.params_mut());
                out.extend(dense.params_mut());
            }
            Net::BiGru { rnn, dense, .. } => {
                out.extend(rnn.params_mut());
                out.extend(dense.params_mut());
            }
            Net::BiLstm { rnn, dense, .. } => {
                out.extend(rnn.params_mut());
                out.extend(dense.params_mut());
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub(crate) fn check_input(&self, doc: &DocumentMatrix) -> Result<(), ModelError> {
        let expected = (self.config.padded_length, self.config.embedding_dim);
        if doc.matrix.shape() != expected || doc.true_length > doc.matrix.rows() {
            return Err(ModelError::Dimension {
                expected,
                found: doc.matrix.shape(),
            });
        }
        Ok(())
    }

    /// Class logits and the cache for [`Model::backward`].
    pub(crate) fn forward(&self, doc: &DocumentMatrix, mode: &mut Mode<'_>) -> Result<(Vec<f64>, Cache), ModelError> {
        self.check_input(doc)?;
        let x = &doc.matrix;
        let len = doc.true_length;
        Ok(match &self.net {
            Net::Cnn { conv, drop, dense } => {
                let pre = conv.forward(x)?;
                let act = Tensor2::from_vec(pre.rows(), pre.cols(), relu(pre.as_slice())).expect("same shape");
                let (mut feat, argmax) = global_max_pool(&act)?;
                let mask = drop.mask(feat.len(), mode);
                Dropout::apply(mask.as_deref(), &mut feat);
                (dense.forward(&feat), Cache::Cnn { pre, argmax, mask, feat })
            }
            Net::Lstm {
                first,
                drop1,
                second,
                drop2,
                dense,
            } => {
                let (mut hidden1, c1) = first.forward_seq(x, len)?;
                let mask1 = drop1.mask(hidden1.len(), mode);
                Dropout::apply(mask1.as_deref(), hidden1.as_mut_slice());
                let (hs2, c2) = second.forward_seq(&hidden1, len)?;
                let mut feat = Lstm::final_state(&hs2, second.hidden());
                let mask2 = drop2.mask(feat.len(), mode);
                Dropout::apply(mask2.as_deref(), &mut feat);
                (
                    dense.forward(&feat),
                    Cache::Lstm {
                        len,
                        first: c1,
                        mask1,
                        hidden1,
                        second: c2,
                        mask2,
                        feat,
                    },
                )
            }
            Net::CnnGru {
                conv,
                drop_conv,
                gru,
                drop_gru,
                drop_dense,
                dense,
            } => {
                let pre = conv.forward(x)?;
                let mut act = Tensor2::from_vec(pre.rows(), pre.cols(), relu(pre.as_slice())).expect("same shape");
                let mask1 = drop_conv.mask(act.len(), mode);
                Dropout::apply(mask1.as_deref(), act.as_mut_slice());
                // windows that lie inside the document, at least one
                let steps = (len + 1).saturating_sub(conv.size).max(1).min(act.rows());
                let (hs, gc) = gru.forward_seq(&act, steps)?;
                let mut feat = Gru::final_state(&hs, gru.hidden());
                let mask2 = drop_gru.mask(feat.len(), mode);
                let mask3 = drop_dense.mask(feat.len(), mode);
                Dropout::apply(mask2.as_deref(), &mut feat);
                Dropout::apply(mask3.as_deref(), &mut feat);
                (
                    dense.forward(&feat),
                    Cache::CnnGru {
                        pre,
                        mask1,
                        act,
                        steps,
                        gru: gc,
                        mask2,
                        mask3,
                        feat,
                    },
                )
            }
            Net::BiGru { spatial, rnn, dense } => {
                let mut input = x.clone();
                let mask = spatial.mask(x.cols(), mode);
                Dropout::apply_columns(mask.as_deref(), &mut input);
                let (feat, rc) = rnn.forward(&input, len)?;
                (dense.forward(&feat), Cache::BiGru { input, rnn: rc, feat })
            }
            Net::BiLstm { rnn, drop, dense } => {
                let (mut feat, rc) = rnn.forward(x, len)?;
                let mask = drop.mask(feat.len(), mode);
                Dropout::apply(mask.as_deref(), &mut feat);
                (dense.forward(&feat), Cache::BiLstm { rnn: rc, mask, feat })
            }
        })
    }

    /// Accumulates parameter gradients for `grad_logits`.
    pub(crate) fn backward(&mut self, doc: &DocumentMatrix, cache: &Cache, grad_logits: &[f64]) {
        let x = &doc.matrix;
        match (&mut self.net, cache) {
            (Net::Cnn { conv, dense, .. }, Cache::Cnn { pre, argmax, mask, feat }) => {
                let mut g = dense.backward(feat, grad_logits);
                Dropout::apply(mask.as_deref(), &mut g);
                let pooled = global_max_pool_backward(argmax, &g, pre.rows());
                let g_pre = relu_backward(pre.as_slice(), pooled.as_slice());
                conv.backward(x, &Tensor2::from_vec(pre.rows(), pre.cols(), g_pre).expect("same shape"));
            }
            (
                Net::Lstm {
                    first, second, dense, ..
                },
                Cache::Lstm {
                    len,
                    first: c1,
                    mask1,
                    hidden1,
                    second: c2,
                    mask2,
                    feat,
                },
            ) => {
                let mut g = dense.backward(feat, grad_logits);
                if *len == 0 {
                    return;
                }
                Dropout::apply(mask2.as_deref(), &mut g);
                let mut g_hs2 = Tensor2::zeros(*len, second.hidden());
                g_hs2.row_mut(len - 1).copy_from_slice(&g);
                let mut g_h1 = second.backward_seq(hidden1, c2, &g_hs2);
                Dropout::apply(mask1.as_deref(), g_h1.as_mut_slice());
                first.backward_seq(x, c1, &g_h1);
            }
            (
                Net::CnnGru { conv, gru, dense, .. },
                Cache::CnnGru {
                    pre,
                    mask1,
                    act,
                    steps,
                    gru: gc,
                    mask2,
                    mask3,
                    feat,
                },
            ) => {
                let mut g = dense.backward(feat, grad_logits);
                let mask = product(mask2.as_deref(), mask3.as_deref());
                Dropout::apply(mask.as_deref(), &mut g);
                let mut g_hs = Tensor2::zeros(*steps, gru.hidden());
                g_hs.row_mut(steps - 1).copy_from_slice(&g);
                let mut g_act = gru.backward_seq(act, gc, &g_hs);
                Dropout::apply(mask1.as_deref(), g_act.as_mut_slice());
                let g_pre = relu_backward(pre.as_slice(), g_act.as_slice());
                conv.backward(x, &Tensor2::from_vec(pre.rows(), pre.cols(), g_pre).expect("same shape"));
            }
            (Net::BiGru { rnn, dense, .. }, Cache::BiGru { input, rnn: rc, feat }) => {
                let g = dense.backward(feat, grad_logits);
                rnn.backward_pass(input, rc, &g);
            }
            (Net::BiLstm { rnn, dense, .. }, Cache::BiLstm { rnn: rc, mask, feat }) => {
                let mut g = dense.backward(feat, grad_logits);
                Dropout::apply(mask.as_deref(), &mut g);
                rnn.backward_pass(x, rc, &g);
            }
            _ => unreachable!("cache produced by a different architecture"),
        }
    }

    /// Logits with dropout disabled.
    pub fn logits(&self, doc: &DocumentMatrix) -> Result<Vec<f64>, ModelError> {
        Ok(self.forward(doc, &mut Mode::Eval)?.0)
    }

    pub fn predict_matrix(&self, doc: &DocumentMatrix) -> Result<Prediction, ModelError> {
        Ok(Prediction::from_logits(&self.logits(doc)?))
    }

    /// Loss on one example in evaluation mode.
    pub fn example_loss(&self, doc: &DocumentMatrix, label: Polarity) -> Result<f64, ModelError> {
        Ok(softmax_cross_entropy(&self.logits(doc)?, label.class_index()).0)
    }
}

/// Classifies a normalized token sequence. An empty sequence is all padding.
pub fn predict<S: AsRef<str>>(
    model: &Model,
    tokens: &[S],
    table: &EmbeddingTable,
) -> Result<Prediction, ModelError> {
    if table.dim() != model.config.embedding_dim {
        return Err(ModelError::Dimension {
            expected: (model.config.padded_length, model.config.embedding_dim),
            found: (model.config.padded_length, table.dim()),
        });
    }
    model.predict_matrix(&table.encode(tokens, model.config.padded_length))
}

impl Differentiable for Model {
    type Input = DocumentMatrix;

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Model::params_mut(self)
    }

    fn loss(&self, input: &DocumentMatrix, class: usize) -> f64 {
        let logits = self.logits(input).expect("input checked by caller");
        softmax_cross_entropy(&logits, class).0
    }

    fn accumulate_gradients(&mut self, input: &DocumentMatrix, class: usize) -> f64 {
        let (logits, cache) = self.forward(input, &mut Mode::Eval).expect("input checked by caller");
        let (loss, grad) = softmax_cross_entropy(&logits, class);
        self.backward(input, &cache, &grad);
        loss
    }
}
