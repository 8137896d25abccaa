//! Per-example predictions and embeddings written by `train --dump` and
//! `cv --dump`, read back by the analysis commands.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use dmlshot_core::dataio::{read_jsonl, Dataset, LabeledExample};
use dmlshot_core::eval::Evaluation;
use dmlshot_core::numerics::{Mat64, Vec64};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpRecord {
    pub id: String,
    /// `train` or `test`.
    pub split: String,
    pub label: usize,
    pub pred: usize,
    pub probs: Vec<f64>,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub groups: BTreeSet<String>,
}

pub fn records(split: &str, ds: &Dataset, eval: &Evaluation) -> Vec<DumpRecord> {
    ds.examples()
        .iter()
        .enumerate()
        .map(|(i, e)| DumpRecord {
            id: e.id.clone(),
            split: split.to_string(),
            label: e.label,
            pred: eval.preds[i],
            probs: eval.probs.row(i).to_vec(),
            embedding: eval.embeddings.row(i).to_vec(),
            text: e.text.clone(),
            groups: e.groups.clone(),
        })
        .collect()
}

pub fn load(path: &Path) -> Result<Vec<DumpRecord>, Failure> {
    let recs: Vec<DumpRecord> = read_jsonl(path)?;
    if recs.is_empty() {
        return Err(Failure::Runtime(format!("{}: empty dump", path.display())));
    }
    let dim = recs[0].embedding.len();
    if let Some(r) = recs.iter().find(|r| r.embedding.len() != dim) {
        return Err(Failure::Runtime(format!(
            "{}: record {:?} has embedding length {}, expected {dim}",
            path.display(),
            r.id,
            r.embedding.len()
        )));
    }
    Ok(recs)
}

/// Records of `split`, or all of them when `split` is `all`.
pub fn select<'a>(recs: &'a [DumpRecord], split: &str) -> Vec<&'a DumpRecord> {
    recs.iter()
        .filter(|r| split == "all" || r.split == split)
        .collect()
}

pub fn embeddings(recs: &[&DumpRecord]) -> Result<Mat64, Failure> {
    let cols = recs.first().map_or(0, |r| r.embedding.len());
    let data = recs
        .iter()
        .flat_map(|r| r.embedding.iter().copied())
        .collect();
    Ok(Mat64::new(recs.len(), cols, data)?)
}

/// Looks up the embedding of every record of `recs` in `geometry` by id.
pub fn embeddings_from(recs: &[&DumpRecord], geometry: &[DumpRecord]) -> Result<Mat64, Failure> {
    let by_id: HashMap<&str, &DumpRecord> = geometry.iter().map(|r| (r.id.as_str(), r)).collect();
    let matched = recs
        .iter()
        .map(|r| {
            by_id.get(r.id.as_str()).copied().ok_or_else(|| {
                Failure::Runtime(format!("record {:?} missing from geometry dump", r.id))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    embeddings(&matched)
}

/// Rebuilds a dataset of the given records with their learned embeddings.
pub fn to_dataset(recs: &[&DumpRecord]) -> Result<Dataset, Failure> {
    let classes = recs.iter().map(|r| r.label).max().map_or(0, |m| m + 1);
    let dim = recs.first().map_or(0, |r| r.embedding.len());
    let examples = recs
        .iter()
        .map(|r| {
            Ok(LabeledExample {
                id: r.id.clone(),
                label: r.label,
                embedding: Vec64::new(r.embedding.clone())?,
                text: r.text.clone(),
                groups: r.groups.clone(),
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    Ok(Dataset::new("dump", examples, classes, dim)?)
}
