//! Dataset model, line-delimited JSON ingestion, synthetic blobs and
//! stratified few-shot sampling.
//!
//! A dataset file holds one JSON object per line:
//!
//! ```text
//! {"dataset":"mr","num_classes":2,"dim":3}            <- optional header
//! {"id":"a","label":0,"embedding":[0.1,0.2,0.3]}
//! {"id":"b","label":1,"embedding":[0.0,1.0,-2.5],"text":"but why","groups":["but"]}
//! ```
//!
//! Without a header the first record fixes the dimension and the class count
//! is one more than the largest label.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{axpy, dot_unchecked, norm, Mat64, Rng, Vec64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub label: usize,
    pub embedding: Vec64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub groups: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    #[serde(default)]
    dataset: Option<String>,
    #[serde(default)]
    num_classes: Option<usize>,
    #[serde(default)]
    dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    examples: Vec<LabeledExample>,
    num_classes: usize,
    dim: usize,
}

impl Dataset {
    /// Validates and builds a dataset. Every class in `[0, num_classes)` must
    /// occur, ids must be unique and all embeddings must have length `dim`.
    pub fn new(
        name: impl Into<String>,
        examples: Vec<LabeledExample>,
        num_classes: usize,
        dim: usize,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Data("no examples".into()));
        }
        let mut seen = vec![false; num_classes];
        let mut ids = HashSet::with_capacity(examples.len());
        for ex in &examples {
            if ex.embedding.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: ex.embedding.len(),
                });
            }
            if ex.label >= num_classes {
                return Err(Error::Data(format!(
                    "example {:?} has label {} outside [0, {num_classes})",
                    ex.id, ex.label
                )));
            }
            if !ids.insert(ex.id.as_str()) {
                return Err(Error::Data(format!("duplicate id {:?}", ex.id)));
            }
            seen[ex.label] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!("class {c} has no examples")));
        }
        Ok(Dataset {
            name: name.into(),
            examples,
            num_classes,
            dim,
        })
    }

    /// A subset of rows keeping the parent's class count. Subsets may be
    /// empty or miss classes (e.g. the held-out remainder of a sample).
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            examples: idx.iter().map(|&i| self.examples[i].clone()).collect(),
            num_classes: self.num_classes,
            dim: self.dim,
        }
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }

    pub fn embeddings(&self) -> Mat64 {
        let mut m = Mat64::zeros(self.len(), self.dim);
        for (i, e) in self.examples.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&e.embedding);
        }
        m
    }

    /// Tags each example with every token from `tokens` found in its text.
    pub fn tag_tokens(&mut self, tokens: &[String]) {
        for ex in &mut self.examples {
            let Some(text) = &ex.text else { continue };
            let words = tokenize(text);
            for t in tokens {
                let t = t.trim().to_lowercase();
                if !t.is_empty() && words.contains(&t) {
                    ex.groups.insert(t);
                }
            }
        }
    }
}

/// Lower-cased word tokens; a trailing "n't" is split off as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split(|c: char| !(c.is_alphanumeric() || c == '\'')) {
        let w = raw.trim_matches('\'').to_lowercase();
        if w.is_empty() {
            continue;
        }
        match w.strip_suffix("n't") {
            Some(stem) if !stem.is_empty() => {
                out.push(stem.to_string());
                out.push("n't".to_string());
            }
            _ => out.push(w),
        }
    }
    out
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut header: Option<Header> = None;
    let mut examples = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        if value.get("id").is_none() && examples.is_empty() && header.is_none() {
            let h: Header =
                serde_json::from_value(value).map_err(|e| parse_err(lineno, e.to_string()))?;
            dim = h.dim;
            header = Some(h);
            continue;
        }
        let ex: LabeledExample =
            serde_json::from_value(value).map_err(|e| parse_err(lineno, e.to_string()))?;
        let d = *dim.get_or_insert(ex.embedding.len());
        if ex.embedding.len() != d {
            return Err(parse_err(
                lineno,
                format!(
                    "dimension mismatch: expected {d}, got {}",
                    ex.embedding.len()
                ),
            ));
        }
        if let Some(c) = header.as_ref().and_then(|h| h.num_classes) {
            if ex.label >= c {
                return Err(parse_err(
                    lineno,
                    format!("unknown label {} (num_classes = {c})", ex.label),
                ));
            }
        }
        examples.push((lineno, ex));
    }

    if examples.is_empty() {
        return Err(Error::Data(format!("{}: no examples", path.display())));
    }
    let mut ids = HashSet::new();
    for (lineno, ex) in &examples {
        if !ids.insert(ex.id.clone()) {
            return Err(parse_err(*lineno, format!("duplicate id {:?}", ex.id)));
        }
    }
    let num_classes = header
        .as_ref()
        .and_then(|h| h.num_classes)
        .unwrap_or_else(|| 1 + examples.iter().map(|(_, e)| e.label).max().unwrap_or(0));
    let name = header
        .and_then(|h| h.dataset)
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_default();
    Dataset::new(
        name,
        examples.into_iter().map(|(_, e)| e).collect(),
        num_classes,
        dim.unwrap_or(0),
    )
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        dataset: Some(ds.name.clone()),
        num_classes: Some(ds.num_classes),
        dim: Some(ds.dim),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |s: String| writeln!(w, "{s}").map_err(|e| Error::io(path, e));
    emit(serde_json::to_string(&header).expect("header serializes"))?;
    for ex in &ds.examples {
        emit(serde_json::to_string(ex).expect("example serializes"))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let s = serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Parameters of the isotropic Gaussian blob generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class_count: usize,
    pub centroid_separation: f64,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1");
        }
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if self.per_class_count == 0 {
            return bad("per_class_count must be at least 1");
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be positive");
        }
        if !(self.centroid_separation >= 0.0 && self.centroid_separation.is_finite()) {
            return bad("centroid_separation must be non-negative");
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return bad("outlier_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Class centroids at pairwise distance at least `sep`.
///
/// With `classes <= dim` they sit on scaled orthonormal directions, so every
/// pair is exactly `sep` apart; otherwise they are rejection-sampled.
fn blob_centroids(classes: usize, dim: usize, sep: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    if classes <= dim {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(classes);
        while basis.len() < classes {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
            for b in &basis {
                let p = dot_unchecked(b, &v);
                axpy(-p, b, &mut v);
            }
            let n = norm(&v);
            if n > 1e-8 {
                v.iter_mut().for_each(|x| *x /= n);
                basis.push(v);
            }
        }
        let r = sep / std::f64::consts::SQRT_2;
        return basis
            .into_iter()
            .map(|b| b.into_iter().map(|x| x * r).collect())
            .collect();
    }

    let mut half_width = sep.max(1.0) * (classes as f64).powf(1.0 / dim as f64);
    loop {
        let mut cs: Vec<Vec<f64>> = Vec::with_capacity(classes);
        let mut attempts = 0;
        while cs.len() < classes && attempts < 10_000 {
            attempts += 1;
            let c: Vec<f64> = (0..dim)
                .map(|_| rng.uniform(-half_width, half_width))
                .collect();
            if cs
                .iter()
                .all(|o| crate::numerics::sq_dist(o, &c).sqrt() >= sep)
            {
                cs.push(c);
            }
        }
        if cs.len() == classes {
            return cs;
        }
        half_width *= 2.0;
    }
}

pub fn generate_blobs(spec: &BlobSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let centroids = blob_centroids(
        spec.num_classes,
        spec.dim,
        spec.centroid_separation,
        &mut rng,
    );
    let n_out = (spec.outlier_fraction * spec.per_class_count as f64).round() as usize;
    let mut examples = Vec::with_capacity(spec.num_classes * spec.per_class_count);
    for (c, centroid) in centroids.iter().enumerate() {
        let mut order: Vec<usize> = (0..spec.per_class_count).collect();
        rng.shuffle(&mut order);
        let mut is_outlier = vec![false; spec.per_class_count];
        for &i in order.iter().take(n_out) {
            is_outlier[i] = true;
        }
        for (i, &outlier) in is_outlier.iter().enumerate() {
            let sigma = if outlier {
                3.0 * spec.noise_sigma
            } else {
                spec.noise_sigma
            };
            let e: Vec<f64> = centroid
                .iter()
                .map(|m| m + sigma * rng.gaussian())
                .collect();
            examples.push(LabeledExample {
                id: format!("c{c}-{i}"),
                label: c,
                embedding: Vec64::new(e)?,
                text: None,
                groups: BTreeSet::new(),
            });
        }
    }
    Dataset::new(
        format!("blobs-s{}", spec.seed),
        examples,
        spec.num_classes,
        spec.dim,
    )
}

/// Draws `n` examples with per-class counts as equal as the class sizes
/// allow. Both halves keep the dataset's original order.
pub fn stratified_sample(ds: &Dataset, n: usize, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    let counts = ds.class_counts();
    let present: Vec<usize> = (0..ds.num_classes()).filter(|&c| counts[c] > 0).collect();
    if n < present.len() {
        return Err(Error::Stratification {
            requested: n,
            classes: present.len(),
        });
    }
    if n > ds.len() {
        return Err(Error::Data(format!(
            "cannot draw {n} examples from a dataset of {}",
            ds.len()
        )));
    }

    // Water-filling: raise every class with spare capacity one at a time,
    // visiting classes in a random order so remainders are spread fairly.
    let mut quota = vec![0usize; ds.num_classes()];
    let mut order = present.clone();
    rng.shuffle(&mut order);
    let mut left = n;
    while left > 0 {
        let level = order
            .iter()
            .filter(|&&c| quota[c] < counts[c])
            .map(|&c| quota[c])
            .min()
            .expect("n <= N guarantees capacity");
        for &c in &order {
            if left == 0 {
                break;
            }
            if quota[c] == level && quota[c] < counts[c] {
                quota[c] += 1;
                left -= 1;
            }
        }
    }

    let mut chosen = vec![false; ds.len()];
    for c in present {
        let mut members: Vec<usize> = ds
            .examples()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == c)
            .map(|(i, _)| i)
            .collect();
        rng.shuffle(&mut members);
        for &i in members.iter().take(quota[c]) {
            chosen[i] = true;
        }
    }
    let (train, rest): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| chosen[i]);
    Ok((ds.subset(&train), ds.subset(&rest)))
}
