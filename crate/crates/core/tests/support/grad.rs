//! Gradient-check probes: each wraps one layer, treats its input as a parameter and
//! scores its flattened output through a fixed random projection and softmax
//! cross-entropy, so both weight and input gradients are checked.

use opinion_core::embedding::DocumentMatrix;
use opinion_core::models::{Architecture, Hyperparameters, Model, ModelConfig};
use opinion_core::neural::{
    global_max_pool, global_max_pool_backward, gradient_check, relu, relu_backward, softmax_cross_entropy,
    stream_rng, Bidirectional, Conv1d, Dense, Differentiable, Dropout, Gru, Lstm, Mode, Param, Recurrent, Tensor2,
    GRADCHECK_DELTA,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const TOY_DIM: usize = 8;
pub const TOY_LEN: usize = 10;
pub const TOY_WIDTH: usize = 4;

pub enum Layer {
    Conv(Conv1d),
    Dense(Dense),
    Relu,
    MaxPool,
    Dropout(Vec<f64>),
    Lstm(Lstm, usize),
    Gru(Gru, usize),
    BiLstm(Bidirectional<Lstm>, usize),
    BiGru(Bidirectional<Gru>, usize),
}

pub struct LayerProbe {
    pub name: &'static str,
    layer: Layer,
    input: Param,
    head: Tensor2,
}

impl LayerProbe {
    fn forward(&self) -> Vec<f64> {
        let x = &self.input.value;
        match &self.layer {
            Layer::Conv(c) => c.forward(x).unwrap().into_vec(),
            Layer::Dense(d) => d.forward(x.as_slice()),
            Layer::Relu => relu(x.as_slice()),
            Layer::MaxPool => global_max_pool(x).unwrap().0,
            Layer::Dropout(mask) => x.as_slice().iter().zip(mask).map(|(a, m)| a * m).collect(),
            Layer::Lstm(l, len) => l.forward_seq(x, *len).unwrap().0.into_vec(),
            Layer::Gru(g, len) => g.forward_seq(x, *len).unwrap().0.into_vec(),
            Layer::BiLstm(b, len) => b.forward(x, *len).unwrap().0,
            Layer::BiGru(b, len) => b.forward(x, *len).unwrap().0,
        }
    }

    fn logits(&self, out: &[f64]) -> Vec<f64> {
        let mut l = vec![0.0; 3];
        self.head.matvec_acc(out, &mut l);
        l
    }
}

impl Differentiable for LayerProbe {
    type Input = ();

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps: Vec<&mut Param> = match &mut self.layer {
            Layer::Conv(c) => c.params_mut(),
            Layer::Dense(d) => d.params_mut(),
            Layer::Lstm(l, _) => l.params_mut(),
            Layer::Gru(g, _) => g.params_mut(),
            Layer::BiLstm(b, _) => b.params_mut(),
            Layer::BiGru(b, _) => b.params_mut(),
            Layer::Relu | Layer::MaxPool | Layer::Dropout(_) => Vec::new(),
        };
        ps.push(&mut self.input);
        ps
    }

    fn loss(&self, _: &(), class: usize) -> f64 {
        softmax_cross_entropy(&self.logits(&self.forward()), class).0
    }

    fn accumulate_gradients(&mut self, _: &(), class: usize) -> f64 {
        let x = self.input.value.clone();
        let (rows, cols) = x.shape();
        let (loss, g_logits) = softmax_cross_entropy(&self.logits(&self.forward()), class);
        let mut g_out = vec![0.0; self.head.cols()];
        self.head.tmatvec_acc(&g_logits, &mut g_out);
        let g_x: Vec<f64> = match &mut self.layer {
            Layer::Conv(c) => {
                let t = c.output_rows(rows).unwrap();
                c.backward(&x, &Tensor2::from_vec(t, c.filters(), g_out).unwrap()).into_vec()
            }
            Layer::Dense(d) => d.backward(x.as_slice(), &g_out),
            Layer::Relu => relu_backward(x.as_slice(), &g_out),
            Layer::MaxPool => {
                let (_, arg) = global_max_pool(&x).unwrap();
                global_max_pool_backward(&arg, &g_out, rows).into_vec()
            }
            Layer::Dropout(mask) => g_out.iter().zip(mask.iter()).map(|(g, m)| g * m).collect(),
            Layer::Lstm(l, len) => {
                let (_, cache) = l.forward_seq(&x, *len).unwrap();
                let g = Tensor2::from_vec(*len, l.hidden(), g_out).unwrap();
                l.backward_seq(&x, &cache, &g).into_vec()
            }
            Layer::Gru(gru, len) => {
                let (_, cache) = gru.forward_seq(&x, *len).unwrap();
                let g = Tensor2::from_vec(*len, gru.hidden(), g_out).unwrap();
                gru.backward_seq(&x, &cache, &g).into_vec()
            }
            Layer::BiLstm(b, len) => {
                let (_, cache) = b.forward(&x, *len).unwrap();
                b.backward_pass(&x, &cache, &g_out).into_vec()
            }
            Layer::BiGru(b, len) => {
                let (_, cache) = b.forward(&x, *len).unwrap();
                b.backward_pass(&x, &cache, &g_out).into_vec()
            }
        };
        debug_assert_eq!(g_x.len(), rows * cols);
        for (acc, g) in self.input.grad.as_mut_slice().iter_mut().zip(g_x) {
            *acc += g;
        }
        loss
    }
}

/// Every parameter redrawn from `[-scale, scale)`, biases included, so no unit sits
/// exactly on a ReLU kink.
pub fn randomize(params: Vec<&mut Param>, rng: &mut ChaCha8Rng, scale: f64) {
    for p in params {
        let (r, c) = p.value.shape();
        p.value = Tensor2::uniform(r, c, scale, rng);
    }
}

fn probe(name: &'static str, layer: Layer, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> LayerProbe {
    let mut p = LayerProbe {
        name,
        layer,
        input: Param::new("input", Tensor2::uniform(rows, cols, 1.0, rng)),
        head: Tensor2::zeros(0, 0),
    };
    let out = p.forward().len();
    p.head = Tensor2::uniform(3, out, 1.0, rng);
    let ps: Vec<&mut Param> = match &mut p.layer {
        Layer::Conv(c) => c.params_mut(),
        Layer::Dense(d) => d.params_mut(),
        Layer::Lstm(l, _) => l.params_mut(),
        Layer::Gru(g, _) => g.params_mut(),
        Layer::BiLstm(b, _) => b.params_mut(),
        Layer::BiGru(b, _) => b.params_mut(),
        _ => Vec::new(),
    };
    randomize(ps, rng, 0.5);
    p
}

/// One probe per layer kind, seeded.
pub fn layer_probes(seed: u64) -> Vec<LayerProbe> {
    let mut rng = stream_rng(seed, "layer-probes");
    let (d, l, w) = (TOY_DIM, TOY_LEN, TOY_WIDTH);
    let len = rng.gen_range(1..=l);
    let dropout = Dropout::new(0.5).unwrap();
    let mut mask_rng = stream_rng(seed, "mask");
    let mask = dropout.mask(w * 3, &mut Mode::Train(&mut mask_rng)).unwrap();
    let conv = Conv1d::new("conv", w, 3, d, &mut rng);
    let dense = Dense::new("dense", d, w, &mut rng);
    let lstm = Lstm::new("lstm", d, w, &mut rng);
    let gru = Gru::new("gru", d, w, &mut rng);
    let bilstm = Bidirectional {
        forward: Lstm::new("f", d, w, &mut rng),
        backward: Lstm::new("b", d, w, &mut rng),
    };
    let bigru = Bidirectional {
        forward: Gru::new("f", d, w, &mut rng),
        backward: Gru::new("b", d, w, &mut rng),
    };
    vec![
        probe("conv1d", Layer::Conv(conv), l, d, &mut rng),
        probe("dense", Layer::Dense(dense), 1, d, &mut rng),
        probe("relu", Layer::Relu, 1, 3 * w, &mut rng),
        probe("global_max_pool", Layer::MaxPool, l, w, &mut rng),
        probe("dropout", Layer::Dropout(mask), 1, 3 * w, &mut rng),
        probe("lstm", Layer::Lstm(lstm, len), l, d, &mut rng),
        probe("gru", Layer::Gru(gru, len), l, d, &mut rng),
        probe("bilstm", Layer::BiLstm(bilstm, len), l, d, &mut rng),
        probe("bigru", Layer::BiGru(bigru, len), l, d, &mut rng),
    ]
}

/// Toy-scaled version of an architecture's tabled stack.
pub fn toy_config(arch: Architecture, seed: u64) -> ModelConfig {
    let mut c = ModelConfig::new(arch, TOY_LEN, TOY_DIM).with_seed(seed);
    c.hyperparameters = Hyperparameters::defaults(arch).narrowed(TOY_WIDTH);
    c
}

/// Toy model at its seeded initialization with biases moved off zero, so padded
/// conv windows do not sit on the ReLU kink, plus a random document of random true
/// length.
pub fn toy_model_case(arch: Architecture, seed: u64) -> (Model, DocumentMatrix, usize) {
    let mut model = Model::build(toy_config(arch, seed)).unwrap();
    let mut rng = stream_rng(seed, "model-case");
    let biases = model
        .params_mut()
        .into_iter()
        .filter(|p| p.name.ends_with(".bias") || p.name.ends_with(".b"))
        .collect();
    randomize(biases, &mut rng, 0.1);
    let len = rng.gen_range(1..=TOY_LEN);
    let mut matrix = Tensor2::zeros(TOY_LEN, TOY_DIM);
    let filled = Tensor2::uniform(len, TOY_DIM, 1.0, &mut rng);
    matrix.as_mut_slice()[..len * TOY_DIM].copy_from_slice(filled.as_slice());
    let class = rng.gen_range(0..3);
    (model, DocumentMatrix { matrix, true_length: len }, class)
}

pub fn check_layer(p: &mut LayerProbe, class: usize) -> f64 {
    gradient_check(p, &(), class, GRADCHECK_DELTA)
}

pub fn check_model(arch: Architecture, seed: u64) -> f64 {
    let (mut model, doc, class) = toy_model_case(arch, seed);
    gradient_check(&mut model, &doc, class, GRADCHECK_DELTA)
}
