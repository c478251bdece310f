//! Dense 64-bit vector and matrix kernels shared by the rest of the crate.
//!
//! Everything here is a pure function over borrowed data. Softmax and
//! log-sum-exp subtract the running maximum before exponentiating, so logits
//! divided by a temperature of 0.01 never overflow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as the zero vector.
pub const ZERO_NORM: f64 = 1e-300;

/// A finite, nonempty vector of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::LengthMismatch { expected: 1, got: 0 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Vector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Row-major matrix of finite reals with at least one row and one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::BadShape { rows, cols, len: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimMismatch { expected: cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Copy of the selected rows, in the order given.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            if i >= self.rows {
                return Err(Error::LengthMismatch { expected: self.rows, got: i + 1 });
            }
            data.extend_from_slice(self.row(i));
        }
        Matrix::new(idx.len(), self.cols, data)
    }

    /// Same matrix with every row scaled to unit length.
    pub fn normalized_rows(&self) -> Result<Self> {
        let mut out = self.clone();
        for i in 0..out.rows {
            normalize_in_place(out.row_mut(i))?;
        }
        Ok(out)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalize_in_place(v: &mut [f64]) -> Result<()> {
    let n = norm(v);
    // negated so NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(n >= ZERO_NORM) {
        return Err(Error::ZeroVector);
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

/// Scales `v` to unit Euclidean length.
pub fn l2_normalize(v: &Vector) -> Result<Vector> {
    let mut out = v.0.clone();
    normalize_in_place(&mut out)?;
    Ok(Vector(out))
}

/// Cosine of two nonzero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch { expected: a.len(), got: b.len() });
    }
    let (na, nb) = (norm(a), norm(b));
    if !(na >= ZERO_NORM && nb >= ZERO_NORM) {
        return Err(Error::ZeroVector);
    }
    Ok(dot(a, b) / (na * nb))
}

/// Pairwise row similarities: `out[i][j] = <a_i, b_j>`, or the cosine when
/// `normalize` is set.
pub fn similarity_matrix(a: &Matrix, b: &Matrix, normalize: bool) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::DimMismatch { expected: a.cols, got: b.cols });
    }
    let (a, b) = if normalize { (a.normalized_rows()?, b.normalized_rows()?) } else { (a.clone(), b.clone()) };
    let mut data = Vec::with_capacity(a.rows * b.rows);
    for ra in a.iter_rows() {
        data.extend(b.iter_rows().map(|rb| dot(ra, rb)));
    }
    Ok(Matrix { rows: a.rows, cols: b.rows, data })
}

pub(crate) fn check_temperature(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveTemperature(tau))
    }
}

/// Softmax of `x / tau`, shifted by the maximum before exponentiation.
pub fn stable_softmax(x: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_temperature(tau)?;
    if x.is_empty() {
        return Err(Error::LengthMismatch { expected: 1, got: 0 });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let scaled: Vec<f64> = x.iter().map(|v| v / tau).collect();
    Ok(softmax_unchecked(&scaled))
}

pub(crate) fn softmax_unchecked(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// `ln(sum(exp(x)))`, exact for a single element.
pub fn logsumexp(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::LengthMismatch { expected: 1, got: 0 });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(logsumexp_unchecked(x))
}

pub(crate) fn logsumexp_unchecked(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if x.len() == 1 {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
