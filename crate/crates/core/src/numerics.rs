//! Probability vectors, dense row-major matrices, and the numerically stable
//! primitives (softmax, KL divergence, entropy, squared distances) the rest of
//! the crate is built on.
//!
//! Everything is `f64`. Probability vectors are validated once, at
//! construction; nothing downstream renormalizes silently.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of a [`SimplexVector`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A nonnegative vector summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    /// Validates `entries` as a probability vector without rescaling it.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty);
        }
        let mut sum = 0.0;
        for (index, &value) in entries.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { index, value });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::NotSimplex(format!("entry {index} = {value} outside [0, 1]")));
            }
            sum += value;
        }
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::NotSimplex(format!("entries sum to {sum}")));
        }
        Ok(Self(entries))
    }

    /// Normalizes nonnegative finite weights with a positive total.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty);
        }
        let mut total = 0.0;
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { index, value });
            }
            if value < 0.0 {
                return Err(Error::NotSimplex(format!("negative weight {value} at {index}")));
            }
            total += value;
        }
        if total <= 0.0 {
            return Err(Error::NotSimplex("weights sum to zero".into()));
        }
        for w in &mut weights {
            *w /= total;
        }
        Ok(Self(weights))
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform vector needs at least one class");
        Self(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, index: usize) -> Self {
        assert!(index < k, "one-hot index {index} out of range for {k} classes");
        let mut v = vec![0.0; k];
        v[index] = 1.0;
        Self(v)
    }

    /// Rows produced by an already-normalizing computation.
    pub(crate) fn from_normalized(entries: Vec<f64>) -> Self {
        debug_assert!((entries.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL);
        Self(entries)
    }

    /// Raises every entry to at least `floor` and renormalizes.
    pub fn floored(&self, floor: f64) -> Self {
        let clamped: Vec<f64> = self.0.iter().map(|&p| p.max(floor)).collect();
        let total = exact_sum(&clamped);
        Self(clamped.into_iter().map(|p| p / total).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SimplexVector> for Vec<f64> {
    fn from(v: SimplexVector) -> Self {
        v.0
    }
}

impl std::ops::Index<usize> for SimplexVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::DimensionMismatch { expected: rows * cols, actual: values.len() });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![0.0; rows * cols] }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::DimensionMismatch { expected: cols, actual: row.len() });
            }
            values.extend_from_slice(row);
        }
        Ok(Self { rows: rows.len(), cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.values[i * self.cols + j] = value;
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.cols.max(1)).take(self.rows)
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self { rows: indices.len(), cols: self.cols, values }
    }

    /// Index and value of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(usize, f64)> {
        self.values.iter().copied().enumerate().find(|(_, v)| !v.is_finite())
    }
}

/// Rows of source predictions plus features for one step of the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Feature rows, one per sample (N x d).
    pub features: DenseMatrix,
    /// Raw source-model scores (N x source classes).
    pub logits: DenseMatrix,
    /// Source predictions in target-class space.
    pub probs: Vec<SimplexVector>,
    /// Target-class labels, when known.
    pub labels: Option<Vec<usize>>,
    pub task_id: Option<u32>,
}

impl Batch {
    pub fn new(
        features: DenseMatrix,
        logits: DenseMatrix,
        probs: Vec<SimplexVector>,
        labels: Option<Vec<usize>>,
        task_id: Option<u32>,
    ) -> Result<Self> {
        let n = features.rows();
        if probs.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: probs.len() });
        }
        if logits.rows() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: logits.rows() });
        }
        let k = probs.first().map_or(0, SimplexVector::len);
        if let Some(p) = probs.iter().find(|p| p.len() != k) {
            return Err(Error::DimensionMismatch { expected: k, actual: p.len() });
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::DimensionMismatch { expected: n, actual: labels.len() });
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
                return Err(Error::Config(format!("label {bad} out of range for {k} classes")));
            }
        }
        Ok(Self { features, logits, probs, labels, task_id })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.probs.first().map_or(0, SimplexVector::len)
    }
}

/// Correctly rounded sum (Shewchuk's algorithm). The result does not depend
/// on the order of `values`. `partials` is scratch space reused across calls.
pub fn exact_sum_with(values: impl IntoIterator<Item = f64>, partials: &mut Vec<f64>) -> f64 {
    partials.clear();
    for mut x in values {
        let mut kept = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    // Round half to even across the remaining partials.
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Order-independent sum; see [`exact_sum_with`].
pub fn exact_sum(values: &[f64]) -> f64 {
    exact_sum_with(values.iter().copied(), &mut Vec::new())
}

/// Stable `ln Σ exp(x)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Result<SimplexVector> {
    if logits.is_empty() {
        return Err(Error::Empty);
    }
    if let Some((index, &value)) = logits.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { index, value });
    }
    Ok(SimplexVector::from_normalized(softmax_unchecked(logits)))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// `Σ p_k ln(p_k / q_k)` with `0 ln 0 = 0`.
///
/// Returns `+∞` when `p` puts mass where `q` has none; callers that need a
/// finite value must check.
pub fn kl_divergence(p: &SimplexVector, q: &SimplexVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), actual: q.len() });
    }
    let mut total = 0.0;
    for (&pk, &qk) in p.as_slice().iter().zip(q.as_slice()) {
        if pk > 0.0 {
            if qk <= 0.0 {
                return Ok(f64::INFINITY);
            }
            total += pk * (pk / qk).ln();
        }
    }
    // Rounding can leave a tiny negative residue near p = q.
    Ok(total.max(0.0))
}

/// Shannon entropy in nats, `0 ln 0 = 0`.
pub fn entropy(p: &SimplexVector) -> f64 {
    entropy_of(p.as_slice())
}

pub(crate) fn entropy_of(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Squared Euclidean distances between all rows. Each entry is summed in
/// coordinate order so the result is bitwise symmetric.
pub fn pairwise_sq_distances(features: &DenseMatrix) -> DenseMatrix {
    let n = features.rows();
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let xi = features.row(i);
        for j in (i + 1)..n {
            let d: f64 = xi.iter().zip(features.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            out.set(i, j, d);
            out.set(j, i, d);
        }
    }
    out
}
