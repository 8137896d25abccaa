use serde::{Deserialize, Serialize};

use crate::dataio::{stratified_sample, Dataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{mean, softmax_in_place, std_dev, Mat64, Rng};
use crate::trainer::{train, TrainConfig};

use super::metrics::{compute_metrics, Metrics, Scores};

/// A trained model together with its predictions on a held-out set.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub model: Model,
    pub preds: Vec<usize>,
    /// Softmax of the classifier logits, one row per test example.
    pub probs: Mat64,
    pub embeddings: Mat64,
    pub metrics: Metrics,
}

/// Trains on `train` with `cfg` and scores the model on `test`.
pub fn fit_and_evaluate(
    train_set: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<Evaluation> {
    let (model, _) = train(train_set, cfg)?;
    evaluate(model, test)
}

pub fn evaluate(model: Model, test: &Dataset) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let fwd = model.forward(&test.embeddings())?;
    let mut probs = fwd.logits;
    for i in 0..probs.rows() {
        softmax_in_place(probs.row_mut(i));
    }
    let preds: Vec<usize> = probs.iter_rows().map(crate::model::argmax).collect();
    let metrics = compute_metrics(&preds, &test.labels(), Some(&probs), model.num_classes())?;
    Ok(Evaluation {
        model,
        preds,
        probs,
        embeddings: fwd.embeddings,
        metrics,
    })
}

/// One training run inside a fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub fold: usize,
    pub repeat: usize,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub metrics: Metrics,
}

/// Scores of one fold, averaged over its repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVResult {
    pub config: TrainConfig,
    pub train_size: usize,
    pub folds: usize,
    pub repeats: usize,
    pub runs: Vec<RunRecord>,
    pub per_fold: Vec<FoldSummary>,
    /// Mean over `per_fold`.
    pub mean: Scores,
    /// Sample standard deviation over `per_fold`.
    pub std: Scores,
}

impl CVResult {
    pub fn fold_f1(&self) -> Vec<f64> {
        self.per_fold.iter().map(|f| f.scores.f1).collect()
    }
}

fn aggregate(scores: &[Scores], f: fn(&[f64]) -> f64) -> Scores {
    let pick = |g: fn(&Scores) -> f64| f(&scores.iter().map(g).collect::<Vec<_>>());
    let auc = scores
        .iter()
        .map(|s| s.auc)
        .collect::<Option<Vec<f64>>>()
        .map(|v| f(&v));
    Scores {
        f1: pick(|s| s.f1),
        accuracy: pick(|s| s.accuracy),
        precision: pick(|s| s.precision),
        recall: pick(|s| s.recall),
        auc,
    }
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        0.0
    } else {
        std_dev(xs)
    }
}

/// A fixed train/test split and the training seeds of its repeats.
#[derive(Debug, Clone)]
pub struct FoldPlan {
    pub fold: usize,
    pub train: Dataset,
    pub test: Dataset,
    pub seeds: Vec<u64>,
}

/// Draws every split and seed of a [`run_cv`] call up front.
pub fn plan_folds(
    ds: &Dataset,
    train_size: usize,
    folds: usize,
    repeats: usize,
    rng: &mut Rng,
) -> Result<Vec<FoldPlan>> {
    if folds < 2 {
        return Err(Error::Config(
            "cross-validation needs at least 2 folds".into(),
        ));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    if train_size + 1 > ds.len() {
        return Err(Error::Config(format!(
            "train size {train_size} leaves no test examples out of {}",
            ds.len()
        )));
    }
    (0..folds)
        .map(|fold| {
            let mut fold_rng = rng.fork();
            let (train, test) = stratified_sample(ds, train_size, &mut fold_rng)?;
            let seeds = (0..repeats).map(|_| fold_rng.next_u64()).collect();
            Ok(FoldPlan {
                fold,
                train,
                test,
                seeds,
            })
        })
        .collect()
}

struct Job {
    fold: usize,
    repeat: usize,
    seed: u64,
}

/// Repeated stratified subsampling.
///
/// Each fold draws `train_size` training examples from `ds` (stratified) and
/// tests on the remainder. Within a fold the split is fixed and each of the
/// `repeats` runs trains with a fresh seed. Splits and seeds are derived
/// from `rng` before any training, so up to `jobs` runs may execute in
/// parallel without affecting the result.
pub fn run_cv(
    ds: &Dataset,
    train_size: usize,
    folds: usize,
    repeats: usize,
    cfg: &TrainConfig,
    rng: &mut Rng,
    jobs: usize,
) -> Result<CVResult> {
    cfg.validate()?;
    let splits = plan_folds(ds, train_size, folds, repeats, rng)?;
    let plan: Vec<Job> = splits
        .iter()
        .flat_map(|f| {
            f.seeds.iter().enumerate().map(move |(repeat, &seed)| Job {
                fold: f.fold,
                repeat,
                seed,
            })
        })
        .collect();

    let run = |job: &Job| -> Result<RunRecord> {
        let FoldPlan {
            train: train_set,
            test,
            ..
        } = &splits[job.fold];
        let cfg = TrainConfig {
            seed: job.seed,
            ..cfg.clone()
        };
        let eval = fit_and_evaluate(train_set, test, &cfg)?;
        Ok(RunRecord {
            fold: job.fold,
            repeat: job.repeat,
            seed: job.seed,
            train_size: train_set.len(),
            test_size: test.len(),
            metrics: eval.metrics,
        })
    };

    let runs: Vec<RunRecord> = if jobs <= 1 {
        plan.iter().map(run).collect::<Result<_>>()?
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| plan.par_iter().map(run).collect::<Result<_>>())?
    };

    let per_fold: Vec<FoldSummary> = runs
        .chunks(repeats)
        .map(|chunk| FoldSummary {
            fold: chunk[0].fold,
            scores: aggregate(
                &chunk.iter().map(|r| r.metrics.scores()).collect::<Vec<_>>(),
                mean,
            ),
        })
        .collect();
    let fold_scores: Vec<Scores> = per_fold.iter().map(|f| f.scores).collect();
    Ok(CVResult {
        config: cfg.clone(),
        train_size,
        folds,
        repeats,
        runs,
        mean: aggregate(&fold_scores, mean),
        std: aggregate(&fold_scores, sample_std),
        per_fold,
    })
}
