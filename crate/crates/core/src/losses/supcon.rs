use serde::{Deserialize, Serialize};

use super::{check_labels, normalize_rows, normalize_rows_backward, LossBundle};
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot_unchecked, logsumexp_unchecked, Mat64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupConConfig {
    /// Temperature dividing every similarity.
    pub tau: f64,
}

impl SupConConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Supervised contrastive loss, summed over anchors.
///
/// Each anchor `i` with at least one same-class partner contributes
/// `logsumexp_{a≠i}(z_i·z_a/τ) − mean_{p∈P(i)} z_i·z_p/τ`. Anchors without a
/// partner contribute nothing and are counted in `skipped_anchors`.
/// With `normalize`, rows are projected to the unit sphere first and the
/// gradient is taken through the projection.
pub fn supcon(
    embeddings: &Mat64,
    labels: &[usize],
    cfg: &SupConConfig,
    normalize: bool,
) -> Result<LossBundle> {
    cfg.validate()?;
    let (n, d) = (embeddings.rows(), embeddings.cols());
    if n < 2 {
        return Err(Error::BatchTooSmall { needed: 2, got: n });
    }
    check_labels(labels, n, usize::MAX)?;

    let (z, norms) = if normalize {
        let (z, norms) = normalize_rows(embeddings);
        (z, Some(norms))
    } else {
        (embeddings.clone(), None)
    };

    let inv_tau = 1.0 / cfg.tau;
    let mut sims = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s = dot_unchecked(z.row(i), z.row(j)) * inv_tau;
            sims[i * n + j] = s;
            sims[j * n + i] = s;
        }
    }

    let mut value = 0.0;
    let mut skipped = 0;
    // coef[i][a] = ∂L_i/∂s_ia = softmax_a − 1[a ∈ P(i)]/|P(i)|
    let mut coef = vec![0.0; n * n];
    let mut others = Vec::with_capacity(n - 1);
    for i in 0..n {
        let positives = (0..n).filter(|&p| p != i && labels[p] == labels[i]).count();
        if positives == 0 {
            skipped += 1;
            continue;
        }
        let row = &sims[i * n..(i + 1) * n];
        others.clear();
        others.extend((0..n).filter(|&a| a != i).map(|a| row[a]));
        let lse = logsumexp_unchecked(&others);
        let inv_p = 1.0 / positives as f64;
        let mut mean_pos = 0.0;
        for a in (0..n).filter(|&a| a != i) {
            let mut c = (row[a] - lse).exp();
            if labels[a] == labels[i] {
                mean_pos += row[a];
                c -= inv_p;
            }
            coef[i * n + a] = c;
        }
        value += lse - mean_pos * inv_p;
    }

    // s_ia = z_i·z_a/τ touches both rows, so row i collects coef[i][a] + coef[a][i].
    let mut grad = Mat64::zeros(n, d);
    for i in 0..n {
        let g = grad.row_mut(i);
        for a in (0..n).filter(|&a| a != i) {
            let c = (coef[i * n + a] + coef[a * n + i]) * inv_tau;
            if c != 0.0 {
                axpy(c, z.row(a), g);
            }
        }
    }

    if let Some(norms) = norms {
        normalize_rows_backward(&z, &norms, &mut grad);
    }

    Ok(LossBundle {
        value,
        grad_embeddings: grad,
        grad_proxies: None,
        grad_logits: None,
        skipped_anchors: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_pair_same_class() {
        let e = Mat64::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let b = supcon(&e, &[0, 0], &SupConConfig { tau: 1.0 }, true).unwrap();
        assert!(b.value.abs() < 1e-15);
        assert_eq!(b.skipped_anchors, 0);
    }

    #[test]
    fn different_classes_skip_every_anchor() {
        let e = Mat64::from_rows(&[[1.0, 0.0], [0.3, 2.0]]).unwrap();
        let b = supcon(&e, &[0, 1], &SupConConfig { tau: 0.5 }, true).unwrap();
        assert_eq!(b.value, 0.0);
        assert_eq!(b.skipped_anchors, 2);
        assert!(b.grad_embeddings.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn three_point_example() {
        let e = Mat64::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let b = supcon(&e, &[0, 0, 1], &SupConConfig { tau: 1.0 }, true).unwrap();
        let expected = 2.0 * (1.0 + (-1.0f64).exp()).ln();
        assert!((b.value - expected).abs() < 1e-12);
        assert!((b.value - 0.626523).abs() < 1e-6);
        assert_eq!(b.skipped_anchors, 1);
    }

    #[test]
    fn zero_row_gets_no_gradient() {
        let e = Mat64::from_rows(&[[1.0, 0.0], [0.0, 0.0], [0.5, 0.5]]).unwrap();
        let b = supcon(&e, &[0, 0, 0], &SupConConfig { tau: 0.5 }, true).unwrap();
        assert!(b.is_finite());
        assert_eq!(b.grad_embeddings.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn errors() {
        let one = Mat64::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(matches!(
            supcon(&one, &[0], &SupConConfig { tau: 1.0 }, true),
            Err(Error::BatchTooSmall { .. })
        ));
        let two = Mat64::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(supcon(&two, &[0, 0], &SupConConfig { tau: 0.0 }, false).is_err());
    }
}
