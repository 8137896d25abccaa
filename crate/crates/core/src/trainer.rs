//! Mini-batch AdamW training with linear warmup.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::losses::{CombinedConfig, DmlConfig, SoftTripleConfig, SupConConfig};
use crate::model::{init_params, Activation, Model, ModelLayout, ParamVector};
use crate::numerics::Rng;

/// Everything a training run depends on. Missing fields in a config file
/// take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub epochs: usize,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: CombinedConfig,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Hidden layer widths of the encoder.
    pub hidden: Vec<usize>,
    /// Encoder output width.
    pub embedding_dim: usize,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            base_lr: 1e-3,
            epochs: 10,
            warmup_frac: 0.06,
            weight_decay: 0.01,
            seed: 0,
            loss: CombinedConfig::cce_only(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            hidden: vec![64],
            embedding_dim: 32,
            activation: Activation::Tanh,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch_size and epochs must be at least 1".into(),
            ));
        }
        if matches!(self.loss.dml, DmlConfig::SupCon(_))
            && self.loss.beta < 1.0
            && self.batch_size < 2
        {
            return Err(Error::Config("supcon needs batch_size >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config(format!(
                "warmup_frac must lie in [0, 1), got {}",
                self.warmup_frac
            )));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if self.embedding_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("layer widths must be at least 1".into()));
        }
        Ok(())
    }

    /// Model shape for a dataset with `input_dim` features and `classes`
    /// classes.
    pub fn layout(&self, input_dim: usize, classes: usize) -> ModelLayout {
        ModelLayout {
            input_dim,
            hidden: self.hidden.clone(),
            output_dim: self.embedding_dim,
            classes,
            proxies_per_class: match self.loss.dml {
                DmlConfig::SoftTriple(st) => Some(st.k),
                _ => None,
            },
            activation: self.activation,
            activate_output: false,
        }
    }

    pub fn optimizer(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Reads a TOML file whose keys mirror [`TrainConfig`].
pub fn load_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|(line, msg)| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    })
}

fn parse_config(text: &str) -> std::result::Result<TrainConfig, (usize, String)> {
    toml::from_str::<TrainConfig>(text).map_err(|e| {
        let line = e
            .span()
            .map_or(0, |s| text[..s.start].matches('\n').count() + 1);
        (line, e.message().to_string())
    })
}

/// Loss and schedule settings tuned per training-set size. Sizes are
/// matched to the nearest of 20, 100 and 1000 on a log scale.
pub fn preset(dml: &str, train_size: usize) -> Result<TrainConfig> {
    let tier = if train_size < 45 {
        0
    } else if train_size < 317 {
        1
    } else {
        2
    };
    let epochs = [128, 64, 8][tier];
    let loss = match dml {
        "cce" => CombinedConfig::cce_only(),
        "supcon" => CombinedConfig {
            beta: 0.9,
            dml: DmlConfig::SupCon(SupConConfig {
                tau: [0.6, 0.7, 0.7][tier],
            }),
            normalize: true,
        },
        "softtriple" => {
            let (k, lambda, delta, beta) = [
                (25, 9.0, 0.7, 0.4),
                (2000, 4.0, 0.7, 0.8),
                (2000, 7.0, 0.9, 0.9),
            ][tier];
            CombinedConfig {
                beta,
                dml: DmlConfig::SoftTriple(SoftTripleConfig {
                    k,
                    gamma: 0.1,
                    lambda,
                    delta,
                }),
                normalize: true,
            }
        }
        other => return Err(Error::Config(format!("unknown loss {other:?}"))),
    };
    Ok(TrainConfig {
        epochs,
        loss,
        ..TrainConfig::default()
    })
}

/// Learning rate at `step`: linear ramp over the first
/// `ceil(warmup_frac · total_steps)` steps, then constant.
pub fn lr_at(step: usize, total_steps: usize, base_lr: f64, warmup_frac: f64) -> f64 {
    let warmup = (warmup_frac * total_steps as f64).ceil() as usize;
    if step < warmup {
        base_lr * (step + 1) as f64 / warmup as f64
    } else {
        base_lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }
}

/// One AdamW update in place. Weight decay (`p −= lr·wd·p`) skips the proxy
/// block, and every proxy that moved is rescaled to unit norm afterwards.
pub fn adamw_step(
    params: &mut ParamVector,
    grads: &ParamVector,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.layout != grads.layout {
        return Err(Error::Config(
            "parameter and gradient layouts differ".into(),
        ));
    }
    if state.m.len() != params.len() {
        return Err(Error::Dimension {
            expected: params.len(),
            got: state.m.len(),
        });
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let proxies = params.layout.proxy_range().unwrap_or(0..0);
    let decay = lr * cfg.weight_decay;

    let dim = params.layout.output_dim;
    let mut moved = vec![false; proxies.len() / dim.max(1)];
    let p = params.values_mut();
    for (i, (&g, (m, v))) in grads
        .values()
        .iter()
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        .enumerate()
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        if decay != 0.0 && !proxies.contains(&i) {
            p[i] -= decay * p[i];
        }
        let step = lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
        if step != 0.0 {
            p[i] -= step;
            if proxies.contains(&i) {
                moved[(i - proxies.start) / dim] = true;
            }
        }
    }

    if !proxies.is_empty() {
        let chunks = params.values_mut()[proxies].chunks_exact_mut(dim);
        for (w, _) in chunks.zip(&moved).filter(|(_, m)| **m) {
            let n = crate::numerics::norm(w);
            if n > 0.0 {
                w.iter_mut().for_each(|x| *x /= n);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub cce: f64,
    pub dml: f64,
    pub batch_size: usize,
    /// SupCon anchors without a positive in the batch.
    pub skipped_anchors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }
}

pub fn total_steps(n: usize, batch_size: usize, epochs: usize) -> usize {
    n.div_ceil(batch_size) * epochs
}

/// Trains a freshly initialized model on `ds`.
///
/// The run is a pure function of `(ds, cfg)`: initialization and the
/// per-epoch shuffles draw from independent streams forked off `cfg.seed`.
/// The last batch of an epoch may be smaller than `batch_size`.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut init_rng = rng.fork();
    let mut shuffle_rng = rng.fork();

    let layout = cfg.layout(ds.dim(), ds.num_classes());
    let mut params = init_params(&layout, &mut init_rng)?.flatten();
    let mut state = AdamState::new(params.len());
    let opt = cfg.optimizer();

    let x = ds.embeddings();
    let labels = ds.labels();
    let n = ds.len();
    let total = total_steps(n, cfg.batch_size, cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    let mut steps = Vec::with_capacity(total);
    let mut model = Model::unflatten(&params)?;

    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let step = steps.len();
            let bx = x.select_rows(batch);
            let by: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (out, grads) = model.objective(&bx, &by, &cfg.loss)?;
            if !out.bundle.value.is_finite() {
                return Err(Error::Degenerate(format!("loss diverged at step {step}")));
            }
            let lr = lr_at(step, total, cfg.base_lr, cfg.warmup_frac);
            adamw_step(&mut params, &grads, &mut state, lr, &opt)?;
            model = Model::unflatten(&params)?;
            steps.push(StepRecord {
                step,
                epoch,
                lr,
                loss: out.bundle.value,
                cce: out.cce,
                dml: out.dml,
                batch_size: batch.len(),
                skipped_anchors: out.bundle.skipped_anchors,
            });
        }
    }
    Ok((model, TrainHistory { steps }))
}

/// Fraction of `ds` the model classifies correctly.
pub fn accuracy(model: &Model, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Data("accuracy of an empty dataset".into()));
    }
    let pred = model.predict(&ds.embeddings())?;
    let hits = pred
        .iter()
        .zip(ds.examples())
        .filter(|(p, e)| **p == e.label)
        .count();
    Ok(hits as f64 / ds.len() as f64)
}
