use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor2 {
    type Error = String;

    fn try_from(raw: RawTensor) -> Result<Self, Self::Error> {
        Tensor2::from_vec(raw.rows, raw.cols, raw.data).ok_or_else(|| "tensor data length does not match shape".into())
    }
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// `None` when `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return None;
        }
        Some(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    /// Entries drawn uniformly from `[-limit, limit)`.
    pub fn uniform<R: Rng>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| if limit > 0.0 { rng.gen_range(-limit..limit) } else { 0.0 })
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Rows `range` as one contiguous slice.
    pub fn rows_slice(&self, range: Range<usize>) -> &[f64] {
        &self.data[range.start * self.cols..range.end * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// First `n` rows in reverse order.
    pub fn reversed_prefix(&self, n: usize) -> Tensor2 {
        let mut out = Tensor2::zeros(n, self.cols);
        for t in 0..n {
            out.row_mut(t).copy_from_slice(self.row(n - 1 - t));
        }
        out
    }

    /// `out += W x`.
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        self.matvec_rows_acc(0..self.rows, x, out);
    }

    /// `out += W[rows] x`, with `out` indexed from zero.
    pub fn matvec_rows_acc(&self, rows: Range<usize>, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), rows.len());
        for (o, r) in out.iter_mut().zip(rows) {
            *o += dot(self.row(r), x);
        }
    }

    /// `out += Wᵀ g`.
    pub fn tmatvec_acc(&self, g: &[f64], out: &mut [f64]) {
        self.tmatvec_rows_acc(0..self.rows, g, out);
    }

    /// `out += W[rows]ᵀ g`, with `g` indexed from zero.
    pub fn tmatvec_rows_acc(&self, rows: Range<usize>, g: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.cols);
        debug_assert_eq!(g.len(), rows.len());
        for (&gi, r) in g.iter().zip(rows) {
            if gi != 0.0 {
                axpy(gi, self.row(r), out);
            }
        }
    }

    /// `W += g xᵀ`.
    pub fn outer_acc(&mut self, g: &[f64], x: &[f64]) {
        self.outer_rows_acc(0, g, x);
    }

    /// `W[offset..offset+g.len()] += g xᵀ`.
    pub fn outer_rows_acc(&mut self, offset: usize, g: &[f64], x: &[f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (i, &gi) in g.iter().enumerate() {
            if gi != 0.0 {
                axpy(gi, x, self.row_mut(offset + i));
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a x`.
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose() {
        let w = Tensor2::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let mut out = vec![0.0; 3];
        w.matvec_acc(&[1.0, -1.0], &mut out);
        assert_eq!(out, vec![-1.0, -1.0, -1.0]);
        let mut back = vec![0.0; 2];
        w.tmatvec_acc(&[1.0, 0.0, 1.0], &mut back);
        assert_eq!(back, vec![6.0, 8.0]);
        let mut part = vec![0.0; 2];
        w.matvec_rows_acc(1..3, &[1.0, 0.0], &mut part);
        assert_eq!(part, vec![3.0, 5.0]);
    }

    #[test]
    fn outer_product() {
        let mut w = Tensor2::zeros(3, 2);
        w.outer_rows_acc(1, &[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(w.as_slice(), &[0.0, 0.0, 3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn serde_checks_shape() {
        let t = Tensor2::from_vec(1, 2, vec![0.1, 1.0 / 3.0]).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<Tensor2>(&s).unwrap(), t);
        assert!(serde_json::from_str::<Tensor2>(r#"{"rows":2,"cols":2,"data":[1.0]}"#).is_err());
    }

    #[test]
    fn reverse_prefix() {
        let t = Tensor2::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(t.reversed_prefix(2).as_slice(), &[2.0, 1.0]);
    }
}
