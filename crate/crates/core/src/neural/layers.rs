use rand::Rng;

use super::{glorot_limit, Mode, NeuralError, Param, Tensor2};
use super::tensor::axpy;

/// Valid 1-D convolution over the rows of an `L x d` input.
///
/// Filter `k` is row `k` of `weight`, laid out as `size` consecutive input rows, so
/// each output is a dot product with a contiguous window of the input.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub size: usize,
    pub in_dim: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Conv1d {
    pub fn new<R: Rng>(name: &str, filters: usize, size: usize, in_dim: usize, rng: &mut R) -> Self {
        let limit = glorot_limit(size * in_dim, size * filters);
        Self {
            size,
            in_dim,
            weight: Param::new(format!("{name}.weight"), Tensor2::uniform(filters, size * in_dim, limit, rng)),
            bias: Param::new(format!("{name}.bias"), Tensor2::zeros(1, filters)),
        }
    }

    pub fn filters(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn output_rows(&self, input_rows: usize) -> Result<usize, NeuralError> {
        if input_rows < self.size {
            return Err(NeuralError::SequenceTooShort {
                len: input_rows,
                size: self.size,
            });
        }
        Ok(input_rows - self.size + 1)
    }

    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2, NeuralError> {
        if x.cols() != self.in_dim {
            return Err(NeuralError::Shape(format!(
                "conv input has {} columns, expected {}",
                x.cols(),
                self.in_dim
            )));
        }
        let t_out = self.output_rows(x.rows())?;
        let k = self.filters();
        let mut y = Tensor2::zeros(t_out, k);
        for t in 0..t_out {
            let window = x.rows_slice(t..t + self.size);
            let row = y.row_mut(t);
            row.copy_from_slice(self.bias.value.as_slice());
            self.weight.value.matvec_acc(window, row);
        }
        Ok(y)
    }

    /// Accumulates filter and bias gradients; returns the input gradient.
    pub fn backward(&mut self, x: &Tensor2, grad_y: &Tensor2) -> Tensor2 {
        let mut grad_x = Tensor2::zeros(x.rows(), x.cols());
        for t in 0..grad_y.rows() {
            let g = grad_y.row(t);
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            axpy(1.0, g, self.bias.grad.as_mut_slice());
            let window = x.rows_slice(t..t + self.size);
            self.weight.grad.outer_acc(g, window);
            let start = t * self.in_dim;
            let gx = &mut grad_x.as_mut_slice()[start..start + self.size * self.in_dim];
            self.weight.value.tmatvec_acc(g, gx);
        }
        grad_x
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Column-wise maximum and the row that produced it (first row on ties).
pub fn global_max_pool(y: &Tensor2) -> Result<(Vec<f64>, Vec<usize>), NeuralError> {
    if y.rows() == 0 {
        return Err(NeuralError::EmptySequence);
    }
    let mut max = y.row(0).to_vec();
    let mut arg = vec![0; y.cols()];
    for t in 1..y.rows() {
        for (k, &v) in y.row(t).iter().enumerate() {
            if v > max[k] {
                max[k] = v;
                arg[k] = t;
            }
        }
    }
    Ok((max, arg))
}

pub fn global_max_pool_backward(argmax: &[usize], grad: &[f64], rows: usize) -> Tensor2 {
    let mut g = Tensor2::zeros(rows, argmax.len());
    for (k, (&t, &v)) in argmax.iter().zip(grad).enumerate() {
        g.set(t, k, v);
    }
    g
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient through ReLU given its pre-activation; zero at the kink.
pub fn relu_backward(pre: &[f64], grad: &[f64]) -> Vec<f64> {
    pre.iter().zip(grad).map(|(&p, &g)| if p > 0.0 { g } else { 0.0 }).collect()
}

/// Fully connected layer `y = W x + b` with `W: out x in`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn new<R: Rng>(name: &str, input: usize, units: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                Tensor2::uniform(units, input, glorot_limit(input, units), rng),
            ),
            bias: Param::new(format!("{name}.bias"), Tensor2::zeros(1, units)),
        }
    }

    pub fn units(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.value.as_slice().to_vec();
        self.weight.value.matvec_acc(x, &mut y);
        y
    }

    pub fn backward(&mut self, x: &[f64], grad_y: &[f64]) -> Vec<f64> {
        axpy(1.0, grad_y, self.bias.grad.as_mut_slice());
        self.weight.grad.outer_acc(grad_y, x);
        let mut gx = vec![0.0; x.len()];
        self.weight.value.tmatvec_acc(grad_y, &mut gx);
        gx
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` during training, and
/// evaluation is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self, NeuralError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NeuralError::DropoutRate(rate));
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Multiplicative mask of `len` entries, or `None` for the identity.
    pub fn mask(&self, len: usize, mode: &mut Mode<'_>) -> Option<Vec<f64>> {
        let Mode::Train(rng) = mode else { return None };
        if self.rate == 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - self.rate);
        Some(
            (0..len)
                .map(|_| if rng.gen::<f64>() < self.rate { 0.0 } else { keep })
                .collect(),
        )
    }

    /// Applies a mask from [`Dropout::mask`]; also used unchanged for the backward pass.
    pub fn apply(mask: Option<&[f64]>, x: &mut [f64]) {
        if let Some(m) = mask {
            for (v, k) in x.iter_mut().zip(m) {
                *v *= k;
            }
        }
    }

    /// Applies a per-column mask to every row (spatial dropout).
    pub fn apply_columns(mask: Option<&[f64]>, x: &mut Tensor2) {
        if let Some(m) = mask {
            for r in 0..x.rows() {
                Self::apply(Some(m), x.row_mut(r));
            }
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Cross-entropy of `softmax(logits)` against `class`, with the logit gradient.
pub fn softmax_cross_entropy(logits: &[f64], class: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|&l| (l - m).exp()).sum();
    let lse = m + z.ln();
    let loss = lse - logits[class];
    let mut grad = softmax(logits);
    grad[class] -= 1.0;
    (loss, grad)
}

/// Triple-loop convolution, the reference for the windowed kernel.
#[cfg(test)]
fn conv_reference(x: &Tensor2, w: &Tensor2, b: &[f64], size: usize) -> Tensor2 {
    let d = x.cols();
    let t_out = x.rows() - size + 1;
    let mut y = Tensor2::zeros(t_out, w.rows());
    for t in 0..t_out {
        for k in 0..w.rows() {
            let mut s = b[k];
            for i in 0..size {
                for j in 0..d {
                    s += x.get(t + i, j) * w.get(k, i * d + j);
                }
            }
            y.set(t, k, s);
        }
    }
    y
}
