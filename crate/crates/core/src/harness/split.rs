use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::neural::stream_rng;
use crate::Polarity;

pub const MIN_SPLIT_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.90,
            test_fraction: 0.06,
            val_fraction: 0.04,
            seed: 0,
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fr = [self.train_fraction, self.test_fraction, self.val_fraction];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(HarnessError::Spec(format!("fractions must lie in [0, 1], got {fr:?}")));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(HarnessError::Spec(format!("fractions must sum to 1, got {fr:?}")));
        }
        if self.train_fraction == 0.0 {
            return Err(HarnessError::Spec("train_fraction must be positive".into()));
        }
        Ok(())
    }

    /// `(train, test, val)` sizes. Test and validation get their rounded share, at
    /// least one item when their fraction is nonzero; train takes the rest.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize), HarnessError> {
        self.validate()?;
        if n < MIN_SPLIT_SIZE {
            return Err(HarnessError::TooSmall { n, min: MIN_SPLIT_SIZE });
        }
        let share = |f: f64| if f > 0.0 { ((f * n as f64).round() as usize).max(1) } else { 0 };
        let (test, val) = (share(self.test_fraction), share(self.val_fraction));
        if test + val >= n {
            return Err(HarnessError::TooSmall { n, min: MIN_SPLIT_SIZE });
        }
        Ok((n - test - val, test, val))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub val: Vec<T>,
}

/// Partitions `items` into train/test/val. Each partition keeps the input order.
///
/// In stratified mode every class is shuffled on its own and shared out so each
/// partition holds each class's proportional count, rounded up or down.
pub fn split<T, F>(items: Vec<T>, label_of: F, spec: &SplitSpec) -> Result<Split<T>, HarnessError>
where
    F: Fn(&T) -> Polarity,
{
    let n = items.len();
    let (n_train, n_test, n_val) = spec.sizes(n)?;
    let mut rng = stream_rng(spec.seed, "split");
    // part[i]: 0 train, 1 test, 2 val
    let mut part = vec![0u8; n];

    if spec.stratified {
        let mut by_class: [Vec<usize>; 3] = Default::default();
        for (i, item) in items.iter().enumerate() {
            by_class[label_of(item).class_index()].push(i);
        }
        let class_sizes = by_class.each_ref().map(Vec::len);
        let table = allocate(class_sizes, [n_train, n_test, n_val]);
        for (c, members) in by_class.iter_mut().enumerate() {
            members.shuffle(&mut rng);
            let (test, rest) = members.split_at(table[c][1]);
            let (val, _) = rest.split_at(table[c][2]);
            for &i in test {
                part[i] = 1;
            }
            for &i in val {
                part[i] = 2;
            }
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for &i in &order[..n_test] {
            part[i] = 1;
        }
        for &i in &order[n_test..n_test + n_val] {
            part[i] = 2;
        }
    }

    let mut out = Split {
        train: Vec::with_capacity(n_train),
        test: Vec::with_capacity(n_test),
        val: Vec::with_capacity(n_val),
    };
    for (item, p) in items.into_iter().zip(part) {
        match p {
            0 => out.train.push(item),
            1 => out.test.push(item),
            _ => out.val.push(item),
        }
    }
    Ok(out)
}

/// Integer class-by-partition table with the given margins where every cell is the
/// floor or ceiling of its proportional share `rows[c] * cols[p] / n`.
///
/// Such a rounding of a two-way table always exists; the search takes the first
/// one in a fixed enumeration order.
fn allocate(rows: [usize; 3], cols: [usize; 3]) -> [[usize; 3]; 3] {
    let n: usize = rows.iter().sum();
    let mut base = [[0usize; 3]; 3];
    let mut fractional = Vec::new();
    for c in 0..3 {
        for p in 0..3 {
            let prod = rows[c] * cols[p];
            base[c][p] = prod / n;
            if !prod.is_multiple_of(n) {
                fractional.push((c, p));
            }
        }
    }
    for mask in 0u32..(1 << fractional.len()) {
        let mut t = base;
        for (bit, &(c, p)) in fractional.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                t[c][p] += 1;
            }
        }
        let rows_ok = (0..3).all(|c| t[c].iter().sum::<usize>() == rows[c]);
        let cols_ok = (0..3).all(|p| (0..3).map(|c| t[c][p]).sum::<usize>() == cols[p]);
        if rows_ok && cols_ok {
            return t;
        }
    }
    unreachable!("controlled rounding exists for every two-way table")
}
