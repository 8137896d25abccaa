use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Mat64;

use super::stats::midranks;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Classification quality of one prediction set. Precision, recall and F1
/// are macro averages over the classes present in the labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub f1: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// ROC-AUC of the class-1 score; binary problems with scores only.
    pub auc: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][pred]`
    pub confusion: Vec<Vec<usize>>,
    /// Ratios whose denominator was zero and were set to 0.
    pub zero_divisions: usize,
}

/// The scalar part of [`Metrics`], used for fold aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub f1: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
}

impl Metrics {
    pub fn scores(&self) -> Scores {
        Scores {
            f1: self.f1,
            accuracy: self.accuracy,
            precision: self.precision,
            recall: self.recall,
            auc: self.auc,
        }
    }
}

fn ratio(num: usize, den: usize, zero_divisions: &mut usize) -> f64 {
    if den == 0 {
        *zero_divisions += 1;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, macro precision/recall/F1, confusion matrix and (for two
/// classes with `scores`) ROC-AUC. Empty denominators count as 0 and are
/// tallied in `zero_divisions`.
pub fn compute_metrics(
    preds: &[usize],
    labels: &[usize],
    scores: Option<&Mat64>,
    classes: usize,
) -> Result<Metrics> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            got: preds.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Data("metrics need at least one example".into()));
    }
    if let Some(&bad) = preds.iter().chain(labels).find(|&&c| c >= classes) {
        return Err(Error::Domain(format!("class {bad} outside [0, {classes})")));
    }
    if let Some(s) = scores {
        if s.rows() != labels.len() || s.cols() != classes {
            return Err(Error::Dimension {
                expected: labels.len() * classes,
                got: s.rows() * s.cols(),
            });
        }
    }

    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &y) in preds.iter().zip(labels) {
        confusion[y][p] += 1;
    }
    let n = labels.len();
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();

    let mut zero_divisions = 0;
    let mut per_class = Vec::with_capacity(classes);
    let (mut sp, mut sr, mut sf, mut present) = (0.0, 0.0, 0.0, 0usize);
    for c in 0..classes {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..classes).map(|t| confusion[t][c]).sum();
        let precision = ratio(tp, predicted, &mut zero_divisions);
        let recall = ratio(tp, support, &mut zero_divisions);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        if support > 0 {
            sp += precision;
            sr += recall;
            sf += f1;
            present += 1;
        }
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support,
        });
    }
    let present = present as f64;

    let auc = match scores {
        Some(s) if classes == 2 => {
            binary_auc(&s.iter_rows().map(|r| r[1]).collect::<Vec<_>>(), labels)
        }
        _ => None,
    };

    Ok(Metrics {
        f1: sf / present,
        accuracy: correct as f64 / n as f64,
        precision: sp / present,
        recall: sr / present,
        auc,
        per_class,
        confusion,
        zero_divisions,
    })
}

/// Rank-based ROC-AUC of `score` for the positive class 1. `None` when one
/// class is missing.
pub fn binary_auc(score: &[f64], labels: &[usize]) -> Option<f64> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let ranks = midranks(score);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == 1)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}
