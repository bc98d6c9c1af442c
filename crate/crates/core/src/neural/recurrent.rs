use rand::Rng;

use super::tensor::axpy;
use super::{NeuralError, Param, Tensor2};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// A recurrent layer run over the first `len` rows of its input.
pub trait Recurrent {
    type Cache;

    fn hidden(&self) -> usize;
    fn input_dim(&self) -> usize;

    /// Hidden state after every step, `len x hidden`. The initial state is zero.
    fn forward_seq(&self, x: &Tensor2, len: usize) -> Result<(Tensor2, Self::Cache), NeuralError>;

    /// Gradients for every emitted state in, input gradient (`x.rows() x input_dim`,
    /// zero past `len`) out.
    fn backward_seq(&mut self, x: &Tensor2, cache: &Self::Cache, grad_hs: &Tensor2) -> Tensor2;

    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    /// Last emitted state, or zeros for an empty sequence.
    fn final_state(hs: &Tensor2, hidden: usize) -> Vec<f64> {
        match hs.rows() {
            0 => vec![0.0; hidden],
            n => hs.row(n - 1).to_vec(),
        }
    }
}

fn check_input(x: &Tensor2, len: usize, input_dim: usize) -> Result<(), NeuralError> {
    if x.cols() != input_dim {
        return Err(NeuralError::Shape(format!(
            "recurrent input has {} columns, expected {input_dim}",
            x.cols()
        )));
    }
    if len > x.rows() {
        return Err(NeuralError::Shape(format!("length {len} exceeds {} rows", x.rows())));
    }
    Ok(())
}

/// LSTM with gates stacked as input, forget, candidate, output:
/// `a = W x + U h + b`, `c' = f c + i g`, `h' = o tanh(c')`.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w: Param,
    pub u: Param,
    pub b: Param,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Per step: activated gates `[i, f, g, o]` (4H).
    gates: Vec<Vec<f64>>,
    /// Cell state after each step.
    cells: Vec<Vec<f64>>,
    hs: Tensor2,
}

impl Lstm {
    pub fn new<R: Rng>(name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let limit = 1.0 / (hidden as f64).sqrt();
        Self {
            w: Param::new(format!("{name}.w"), Tensor2::uniform(4 * hidden, input, limit, rng)),
            u: Param::new(format!("{name}.u"), Tensor2::uniform(4 * hidden, hidden, limit, rng)),
            b: Param::new(format!("{name}.b"), Tensor2::zeros(1, 4 * hidden)),
        }
    }

    /// One step; returns the activated gates and the new `(h, c)`.
    fn step_full(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden();
        let mut a = self.b.value.as_slice().to_vec();
        self.w.value.matvec_acc(x, &mut a);
        self.u.value.matvec_acc(h, &mut a);
        for (j, v) in a.iter_mut().enumerate() {
            *v = if (2 * hd..3 * hd).contains(&j) { v.tanh() } else { sigmoid(*v) };
        }
        let (i, rest) = a.split_at(hd);
        let (f, rest) = rest.split_at(hd);
        let (g, o) = rest.split_at(hd);
        let c_new: Vec<f64> = (0..hd).map(|j| f[j] * c[j] + i[j] * g[j]).collect();
        let h_new: Vec<f64> = (0..hd).map(|j| o[j] * c_new[j].tanh()).collect();
        (a, h_new, c_new)
    }

    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (_, h, c) = self.step_full(x, h, c);
        (h, c)
    }
}

impl Recurrent for Lstm {
    type Cache = LstmCache;

    fn hidden(&self) -> usize {
        self.u.value.cols()
    }

    fn input_dim(&self) -> usize {
        self.w.value.cols()
    }

    fn forward_seq(&self, x: &Tensor2, len: usize) -> Result<(Tensor2, LstmCache), NeuralError> {
        check_input(x, len, self.input_dim())?;
        let hd = self.hidden();
        let mut hs = Tensor2::zeros(len, hd);
        let mut gates = Vec::with_capacity(len);
        let mut cells = Vec::with_capacity(len);
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        for t in 0..len {
            let (a, h_new, c_new) = self.step_full(x.row(t), &h, &c);
            hs.row_mut(t).copy_from_slice(&h_new);
            gates.push(a);
            cells.push(c_new.clone());
            h = h_new;
            c = c_new;
        }
        Ok((hs.clone(), LstmCache { gates, cells, hs }))
    }

    fn backward_seq(&mut self, x: &Tensor2, cache: &LstmCache, grad_hs: &Tensor2) -> Tensor2 {
        let hd = self.hidden();
        let len = cache.gates.len();
        let mut grad_x = Tensor2::zeros(x.rows(), x.cols());
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        let zeros = vec![0.0; hd];
        let mut da = vec![0.0; 4 * hd];
        for t in (0..len).rev() {
            let a = &cache.gates[t];
            let c = &cache.cells[t];
            let c_prev = if t > 0 { &cache.cells[t - 1] } else { &zeros };
            let h_prev = if t > 0 { cache.hs.row(t - 1) } else { &zeros[..] };
            for j in 0..hd {
                let (i, f, g, o) = (a[j], a[hd + j], a[2 * hd + j], a[3 * hd + j]);
                let dh = grad_hs.get(t, j) + dh_next[j];
                let tc = c[j].tanh();
                let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
                da[j] = dc * g * i * (1.0 - i);
                da[hd + j] = dc * c_prev[j] * f * (1.0 - f);
                da[2 * hd + j] = dc * i * (1.0 - g * g);
                da[3 * hd + j] = dh * tc * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            axpy(1.0, &da, self.b.grad.as_mut_slice());
            self.w.grad.outer_acc(&da, x.row(t));
            self.u.grad.outer_acc(&da, h_prev);
            self.w.value.tmatvec_acc(&da, grad_x.row_mut(t));
            dh_next.fill(0.0);
            self.u.value.tmatvec_acc(&da, &mut dh_next);
        }
        grad_x
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.u, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.u, &mut self.b]
    }
}

/// GRU with gates stacked as update, reset, candidate, the reset applied before the
/// recurrent product: `n = tanh(Wn x + Un (r h) + bn)`, `h' = z h + (1 - z) n`.
#[derive(Debug, Clone)]
pub struct Gru {
    pub w: Param,
    pub u: Param,
    pub b: Param,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    /// Per step: activated `[z, r, n]` (3H).
    gates: Vec<Vec<f64>>,
    hs: Tensor2,
}

impl Gru {
    pub fn new<R: Rng>(name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let limit = 1.0 / (hidden as f64).sqrt();
        Self {
            w: Param::new(format!("{name}.w"), Tensor2::uniform(3 * hidden, input, limit, rng)),
            u: Param::new(format!("{name}.u"), Tensor2::uniform(3 * hidden, hidden, limit, rng)),
            b: Param::new(format!("{name}.b"), Tensor2::zeros(1, 3 * hidden)),
        }
    }

    fn step_full(&self, x: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hd = self.hidden();
        let mut a = self.b.value.as_slice().to_vec();
        self.w.value.matvec_acc(x, &mut a);
        self.u.value.matvec_rows_acc(0..2 * hd, h, &mut a[..2 * hd]);
        for v in &mut a[..2 * hd] {
            *v = sigmoid(*v);
        }
        let rh: Vec<f64> = (0..hd).map(|j| a[hd + j] * h[j]).collect();
        self.u.value.matvec_rows_acc(2 * hd..3 * hd, &rh, &mut a[2 * hd..]);
        for v in &mut a[2 * hd..] {
            *v = v.tanh();
        }
        let h_new = (0..hd).map(|j| a[j] * h[j] + (1.0 - a[j]) * a[2 * hd + j]).collect();
        (a, h_new)
    }

    pub fn step(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        self.step_full(x, h).1
    }
}

impl Recurrent for Gru {
    type Cache = GruCache;

    fn hidden(&self) -> usize {
        self.u.value.cols()
    }

    fn input_dim(&self) -> usize {
        self.w.value.cols()
    }

    fn forward_seq(&self, x: &Tensor2, len: usize) -> Result<(Tensor2, GruCache), NeuralError> {
        check_input(x, len, self.input_dim())?;
        let hd = self.hidden();
        let mut hs = Tensor2::zeros(len, hd);
        let mut gates = Vec::with_capacity(len);
        let mut h = vec![0.0; hd];
        for t in 0..len {
            let (a, h_new) = self.step_full(x.row(t), &h);
            hs.row_mut(t).copy_from_slice(&h_new);
            gates.push(a);
            h = h_new;
        }
        Ok((hs.clone(), GruCache { gates, hs }))
    }

    fn backward_seq(&mut self, x: &Tensor2, cache: &GruCache, grad_hs: &Tensor2) -> Tensor2 {
        let hd = self.hidden();
        let len = cache.gates.len();
        let mut grad_x = Tensor2::zeros(x.rows(), x.cols());
        let mut dh_next = vec![0.0; hd];
        let zeros = vec![0.0; hd];
        let mut da = vec![0.0; 3 * hd];
        let mut dh_prev = vec![0.0; hd];
        let mut rh = vec![0.0; hd];
        let mut d_rh = vec![0.0; hd];
        for t in (0..len).rev() {
            let a = &cache.gates[t];
            let h_prev = if t > 0 { cache.hs.row(t - 1) } else { &zeros[..] };
            for j in 0..hd {
                let (z, n) = (a[j], a[2 * hd + j]);
                let dh = grad_hs.get(t, j) + dh_next[j];
                dh_prev[j] = dh * z;
                da[j] = dh * (h_prev[j] - n) * z * (1.0 - z);
                da[2 * hd + j] = dh * (1.0 - z) * (1.0 - n * n);
                rh[j] = a[hd + j] * h_prev[j];
            }
            // reset gate gradient flows through the candidate's recurrent product
            d_rh.fill(0.0);
            self.u.value.tmatvec_rows_acc(2 * hd..3 * hd, &da[2 * hd..], &mut d_rh);
            for j in 0..hd {
                let r = a[hd + j];
                da[hd + j] = d_rh[j] * h_prev[j] * r * (1.0 - r);
                dh_prev[j] += d_rh[j] * r;
            }
            axpy(1.0, &da, self.b.grad.as_mut_slice());
            self.w.grad.outer_acc(&da, x.row(t));
            self.u.grad.outer_rows_acc(0, &da[..2 * hd], h_prev);
            self.u.grad.outer_rows_acc(2 * hd, &da[2 * hd..], &rh);
            self.w.value.tmatvec_acc(&da, grad_x.row_mut(t));
            self.u.value.tmatvec_rows_acc(0..2 * hd, &da[..2 * hd], &mut dh_prev);
            std::mem::swap(&mut dh_next, &mut dh_prev);
        }
        grad_x
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.u, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.u, &mut self.b]
    }
}

/// Forward and backward passes over the true length; output is the concatenation
/// of both final states `[forward, backward]`.
#[derive(Debug, Clone)]
pub struct Bidirectional<C> {
    pub forward: C,
    pub backward: C,
}

#[derive(Debug, Clone)]
pub struct BidirectionalCache<K> {
    len: usize,
    reversed: Tensor2,
    fwd: K,
    bwd: K,
}

impl<C: Recurrent> Bidirectional<C> {
    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }

    pub fn forward(&self, x: &Tensor2, len: usize) -> Result<(Vec<f64>, BidirectionalCache<C::Cache>), NeuralError> {
        let hd = self.hidden();
        let (hs_f, fwd) = self.forward.forward_seq(x, len)?;
        let reversed = x.reversed_prefix(len);
        let (hs_b, bwd) = self.backward.forward_seq(&reversed, len)?;
        let mut out = C::final_state(&hs_f, hd);
        out.extend(C::final_state(&hs_b, hd));
        Ok((out, BidirectionalCache { len, reversed, fwd, bwd }))
    }

    pub fn backward_pass(&mut self, x: &Tensor2, cache: &BidirectionalCache<C::Cache>, grad: &[f64]) -> Tensor2 {
        let hd = self.hidden();
        let len = cache.len;
        let mut grad_x = Tensor2::zeros(x.rows(), x.cols());
        if len == 0 {
            return grad_x;
        }
        let mut g = Tensor2::zeros(len, hd);
        g.row_mut(len - 1).copy_from_slice(&grad[..hd]);
        let gx_f = self.forward.backward_seq(x, &cache.fwd, &g);
        g.row_mut(len - 1).copy_from_slice(&grad[hd..]);
        let gx_b = self.backward.backward_seq(&cache.reversed, &cache.bwd, &g);
        for t in 0..len {
            let row = grad_x.row_mut(t);
            axpy(1.0, gx_f.row(t), row);
            axpy(1.0, gx_b.row(len - 1 - t), row);
        }
        grad_x
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.forward.params();
        p.extend(self.backward.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.forward.params_mut();
        p.extend(self.backward.params_mut());
        p
    }
}
