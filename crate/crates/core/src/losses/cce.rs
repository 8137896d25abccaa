use super::{check_labels, LossBundle};
use crate::error::{Error, Result};
use crate::numerics::{logsumexp_unchecked, softmax_in_place, Mat64};

/// Mean categorical cross-entropy of softmax(logits) against `labels`.
pub fn cce(logits: &Mat64, labels: &[usize]) -> Result<LossBundle> {
    let (n, c) = (logits.rows(), logits.cols());
    if n == 0 || c == 0 {
        return Err(Error::Domain(
            "cce needs at least one row and one class".into(),
        ));
    }
    check_labels(labels, n, c)?;

    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad = logits.clone();
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        value += logsumexp_unchecked(row) - row[y];
        let g = grad.row_mut(i);
        softmax_in_place(g);
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v *= inv_n);
    }

    Ok(LossBundle {
        value: value * inv_n,
        grad_embeddings: Mat64::zeros(n, 0),
        grad_proxies: None,
        grad_logits: Some(grad),
        skipped_anchors: 0,
    })
}
