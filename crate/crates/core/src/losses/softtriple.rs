use serde::{Deserialize, Serialize};

use super::{check_labels, normalize_rows, normalize_rows_backward, LossBundle, ProxyMatrix};
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot_unchecked, logsumexp_unchecked, Mat64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftTripleConfig {
    /// Proxies per class.
    pub k: usize,
    /// Temperature of the softmax over a class's proxies.
    pub gamma: f64,
    /// Scale applied to class similarities.
    pub lambda: f64,
    /// Margin subtracted from the true-class similarity.
    pub delta: f64,
}

impl SoftTripleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("softtriple needs k >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !self.delta.is_finite() {
            return Err(Error::Config("delta must be finite".into()));
        }
        Ok(())
    }
}

/// Fills `dots` with `x·w_c^k` and `weights` with their softmax at
/// temperature γ, returning the relaxed similarity `Σ_k weights_k · dots_k`.
#[inline]
fn class_similarity(
    x: &[f64],
    block: &[f64],
    gamma: f64,
    dots: &mut [f64],
    weights: &mut [f64],
) -> f64 {
    let dim = x.len();
    let mut max = f64::NEG_INFINITY;
    for (k, w) in block.chunks_exact(dim).enumerate() {
        let a = dot_unchecked(x, w);
        dots[k] = a;
        max = max.max(a);
    }
    let mut sum = 0.0;
    for (q, a) in weights.iter_mut().zip(dots.iter()) {
        *q = ((a - max) / gamma).exp();
        sum += *q;
    }
    let mut s = 0.0;
    for (q, a) in weights.iter_mut().zip(dots.iter()) {
        *q /= sum;
        s += *q * a;
    }
    s
}

/// Relaxed similarity between `x` and class `c`: the γ-softmax-weighted mix
/// of its proxy inner products.
pub fn softtriple_similarity(
    x: &[f64],
    proxies: &ProxyMatrix,
    c: usize,
    cfg: &SoftTripleConfig,
) -> Result<f64> {
    cfg.validate()?;
    if c >= proxies.classes() {
        return Err(Error::Domain(format!(
            "class {c} outside [0, {})",
            proxies.classes()
        )));
    }
    if x.len() != proxies.dim() || x.is_empty() {
        return Err(Error::Dimension {
            expected: proxies.dim(),
            got: x.len(),
        });
    }
    let k = proxies.k();
    let (mut dots, mut weights) = (vec![0.0; k], vec![0.0; k]);
    Ok(class_similarity(
        x,
        proxies.class_block(c),
        cfg.gamma,
        &mut dots,
        &mut weights,
    ))
}

/// SoftTriple loss, averaged over the batch.
///
/// Per example, class logits are `λ(S_c − δ·[c = y])` and the loss is their
/// cross-entropy against `y`. Gradients cover both the embeddings (through
/// the optional row normalization) and every proxy, including the
/// dependence of the softmax weights on the inner products.
pub fn softtriple(
    embeddings: &Mat64,
    labels: &[usize],
    proxies: &ProxyMatrix,
    cfg: &SoftTripleConfig,
    normalize: bool,
) -> Result<LossBundle> {
    cfg.validate()?;
    let (n, d) = (embeddings.rows(), embeddings.cols());
    let (classes, k) = (proxies.classes(), proxies.k());
    if n == 0 || classes == 0 || d == 0 {
        return Err(Error::Domain(
            "softtriple needs at least one row, one class and one dimension".into(),
        ));
    }
    if proxies.dim() != d {
        return Err(Error::Dimension {
            expected: d,
            got: proxies.dim(),
        });
    }
    if k != cfg.k {
        return Err(Error::Config(format!(
            "proxy matrix has {k} proxies per class but config says {}",
            cfg.k
        )));
    }
    check_labels(labels, n, classes)?;

    let (x, norms) = if normalize {
        let (z, norms) = normalize_rows(embeddings);
        (z, Some(norms))
    } else {
        (embeddings.clone(), None)
    };

    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad_x = Mat64::zeros(n, d);
    let mut grad_w = ProxyMatrix::zeros(classes, k, d);
    let mut dots = vec![0.0; classes * k];
    let mut weights = vec![0.0; classes * k];
    let mut sims = vec![0.0; classes];
    let mut logits = vec![0.0; classes];

    for (i, &y) in labels.iter().enumerate() {
        let xi = x.row(i);
        for c in 0..classes {
            let range = c * k..(c + 1) * k;
            sims[c] = class_similarity(
                xi,
                proxies.class_block(c),
                cfg.gamma,
                &mut dots[range.clone()],
                &mut weights[range],
            );
            logits[c] = cfg.lambda * (sims[c] - if c == y { cfg.delta } else { 0.0 });
        }
        let lse = logsumexp_unchecked(&logits);
        value += lse - logits[y];

        for c in 0..classes {
            let r = (logits[c] - lse).exp() - if c == y { 1.0 } else { 0.0 };
            let g_sim = cfg.lambda * r * inv_n;
            if g_sim == 0.0 {
                continue;
            }
            for kk in 0..k {
                let idx = c * k + kk;
                // ∂S/∂a_k = q_k (1 + (a_k − S)/γ)
                let g = g_sim * weights[idx] * (1.0 + (dots[idx] - sims[c]) / cfg.gamma);
                if g == 0.0 {
                    continue;
                }
                axpy(g, proxies.proxy(c, kk), grad_x.row_mut(i));
                axpy(g, xi, grad_w.proxy_mut(c, kk));
            }
        }
    }

    if let Some(norms) = norms {
        normalize_rows_backward(&x, &norms, &mut grad_x);
    }

    Ok(LossBundle {
        value: value * inv_n,
        grad_embeddings: grad_x,
        grad_proxies: Some(grad_w),
        grad_logits: None,
        skipped_anchors: 0,
    })
}
