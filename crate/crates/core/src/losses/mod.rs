//! Loss values with analytic gradients.
//!
//! Every loss returns a [`LossBundle`] holding the scalar value and the
//! gradient with respect to each input it depends on. Softmax and
//! log-sum-exp reductions always subtract the running maximum, so large
//! scales (λ = 10, γ = 0.01) stay finite.

mod cce;
mod combined;
pub mod gradcheck;
mod softtriple;
mod supcon;

pub use cce::cce;
pub use combined::{combined, CombinedConfig, CombinedOutput, DmlConfig};
pub use gradcheck::{grad_check, GradCheckReport, LossInput};
pub use softtriple::{softtriple, softtriple_similarity, SoftTripleConfig};
pub use supcon::{supcon, SupConConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{norm, Mat64, Rng};

/// Learnable class proxies, `classes × k` vectors of length `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyMatrix {
    classes: usize,
    k: usize,
    dim: usize,
    weights: Vec<f64>,
}

impl ProxyMatrix {
    pub fn new(classes: usize, k: usize, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != classes * k * dim {
            return Err(Error::Dimension {
                expected: classes * k * dim,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Domain("proxy weights must be finite".into()));
        }
        Ok(ProxyMatrix {
            classes,
            k,
            dim,
            weights,
        })
    }

    pub fn zeros(classes: usize, k: usize, dim: usize) -> Self {
        ProxyMatrix {
            classes,
            k,
            dim,
            weights: vec![0.0; classes * k * dim],
        }
    }

    /// Proxies drawn uniformly from the unit sphere (normalized Gaussians).
    pub fn random_unit(classes: usize, k: usize, dim: usize, rng: &mut Rng) -> Self {
        let mut p = ProxyMatrix::zeros(classes, k, dim);
        for w in p.weights.iter_mut() {
            *w = rng.gaussian();
        }
        p.normalize();
        p
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn proxy(&self, class: usize, k: usize) -> &[f64] {
        let start = (class * self.k + k) * self.dim;
        &self.weights[start..start + self.dim]
    }

    #[inline]
    pub fn proxy_mut(&mut self, class: usize, k: usize) -> &mut [f64] {
        let start = (class * self.k + k) * self.dim;
        &mut self.weights[start..start + self.dim]
    }

    /// All proxies of one class, contiguous (`k · dim` values).
    #[inline]
    pub fn class_block(&self, class: usize) -> &[f64] {
        let len = self.k * self.dim;
        &self.weights[class * len..(class + 1) * len]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Rescales every proxy to unit norm. Zero proxies are left as they are.
    pub fn normalize(&mut self) {
        if self.dim == 0 {
            return;
        }
        for w in self.weights.chunks_exact_mut(self.dim) {
            let n = norm(w);
            if n > 0.0 {
                w.iter_mut().for_each(|x| *x /= n);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.weights.iter_mut().for_each(|w| *w *= s);
    }
}

/// Loss value plus gradients with respect to each input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBundle {
    pub value: f64,
    /// N × d; all zeros for losses that do not read embeddings.
    pub grad_embeddings: Mat64,
    pub grad_proxies: Option<ProxyMatrix>,
    pub grad_logits: Option<Mat64>,
    /// SupCon anchors with no same-class partner in the batch.
    pub skipped_anchors: usize,
}

impl LossBundle {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad_embeddings.is_finite()
            && self.grad_logits.as_ref().is_none_or(Mat64::is_finite)
            && self
                .grad_proxies
                .as_ref()
                .is_none_or(|p| p.as_slice().iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Dimension {
            expected: rows,
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Domain(format!("label {bad} outside [0, {classes})")));
    }
    Ok(())
}

/// Row-wise L2 normalization, returning the norms for the backward pass.
/// An all-zero row stays zero and receives no gradient.
pub(crate) fn normalize_rows(x: &Mat64) -> (Mat64, Vec<f64>) {
    let mut z = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let n = norm(x.row(i));
        if n > 0.0 {
            z.row_mut(i).iter_mut().for_each(|v| *v /= n);
        }
        norms.push(n);
    }
    (z, norms)
}

/// Maps a gradient with respect to normalized rows `z = u/‖u‖` back to `u`:
/// `(g − z (z·g)) / ‖u‖`.
pub(crate) fn normalize_rows_backward(z: &Mat64, norms: &[f64], grad_z: &mut Mat64) {
    for (i, &n) in norms.iter().enumerate() {
        let zi = z.row(i);
        let g = grad_z.row_mut(i);
        if n == 0.0 {
            g.fill(0.0);
            continue;
        }
        let p = crate::numerics::dot_unchecked(zi, g);
        for (gv, zv) in g.iter_mut().zip(zi) {
            *gv = (*gv - zv * p) / n;
        }
    }
}
