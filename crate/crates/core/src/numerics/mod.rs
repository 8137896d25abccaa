//! Dense arithmetic, stable reductions and the deterministic generator
//! used by every other module.
//!
//! Everything is `f64`. Matrices are row-major and own their storage.

mod project;
mod rng;

pub use project::{project_2d, ProjectionMethod, TsneParams};
pub use rng::Rng;

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vec64(Vec<f64>);

impl Vec64 {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite entry {} at index {pos}",
                values[pos]
            )));
        }
        Ok(Vec64(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Deref for Vec64 {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Vec64 {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Vec64::new(v)
    }
}

impl From<Vec64> for Vec<f64> {
    fn from(v: Vec64) -> Self {
        v.0
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat64 {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Mat64 {
    /// Builds a matrix, rejecting shape mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("matrix has non-finite entries".into()));
        }
        Ok(Mat64 { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat64 {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    got: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Mat64::new(rows.len(), cols, values)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat64::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; a zero-column matrix has no row data anyway.
        let cols = self.cols.max(1);
        self.values
            .chunks_exact(cols)
            .take(if self.cols == 0 { 0 } else { self.rows })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Selects rows by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Mat64 {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Mat64 {
            rows: idx.len(),
            cols: self.cols,
            values,
        }
    }

    pub fn transpose(&self) -> Mat64 {
        let mut t = Mat64::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Mat64) -> Result<Mat64> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Mat64::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = &mut out.values[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                axpy(aik, other.row(k), o);
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl std::ops::Index<(usize, usize)> for Mat64 {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.values[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat64 {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.values[i * self.cols + j]
    }
}

/// Inner product; errors on length mismatch.
pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(dot_unchecked(a, b))
}

#[inline]
pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm(v: &[f64]) -> f64 {
    dot_unchecked(v, v).sqrt()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Degenerate(format!(
            "cannot normalize vector with norm {n}"
        )));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// `log Σ exp(x)` with max subtraction.
pub fn logsumexp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Domain("logsumexp of empty sequence".into()));
    }
    Ok(logsumexp_unchecked(xs))
}

#[inline]
pub(crate) fn logsumexp_unchecked(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

pub fn softmax(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::Domain("softmax of empty sequence".into()));
    }
    let mut out = xs.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

#[inline]
pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in xs.iter_mut() {
        *x /= s;
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}
