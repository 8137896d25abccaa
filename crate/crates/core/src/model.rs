//! Feed-forward encoder and linear classifier over input embeddings.
//!
//! The trainable state is a [`Model`]: encoder layers, classifier head and
//! (for SoftTriple) class proxies. [`Model::flatten`] packs it into a
//! [`ParamVector`] whose [`ModelLayout`] is enough to rebuild it.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::gradcheck::{check_epsilon, max_relative_error, numeric_gradient};
use crate::losses::{combined, CombinedConfig, CombinedOutput, ProxyMatrix};
use crate::numerics::{axpy, dot_unchecked, Mat64, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output. For relu the
    /// subgradient at 0 is 0.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

/// One affine layer; `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Mat64,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<Dense>,
    pub activation: Activation,
    /// Also apply the activation after the last layer.
    pub activate_output: bool,
}

impl EncoderParams {
    pub fn new(layers: Vec<Dense>, activation: Activation, activate_output: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.rows() {
                return Err(Error::Dimension {
                    expected: l.weight.rows(),
                    got: l.bias.len(),
                });
            }
            if i > 0 && layers[i - 1].weight.rows() != l.weight.cols() {
                return Err(Error::Dimension {
                    expected: layers[i - 1].weight.rows(),
                    got: l.weight.cols(),
                });
            }
        }
        Ok(EncoderParams {
            layers,
            activation,
            activate_output,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.rows())
    }

    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.activate_output
    }
}

/// `C × output_dim` weight plus one bias per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub weight: Mat64,
    pub bias: Vec<f64>,
}

/// Shape description of a model, stored alongside flat parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub classes: usize,
    /// Proxies per class, present only when the model carries proxies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxies_per_class: Option<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub activate_output: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    EncoderWeight(usize),
    EncoderBias(usize),
    ClassifierWeight,
    ClassifierBias,
    Proxies,
}

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub kind: BlockKind,
    pub range: Range<usize>,
}

impl Block {
    pub fn name(&self) -> String {
        match self.kind {
            BlockKind::EncoderWeight(l) => format!("encoder.{l}.weight"),
            BlockKind::EncoderBias(l) => format!("encoder.{l}.bias"),
            BlockKind::ClassifierWeight => "classifier.weight".into(),
            BlockKind::ClassifierBias => "classifier.bias".into(),
            BlockKind::Proxies => "proxies".into(),
        }
    }
}

impl ModelLayout {
    pub fn validate(&self) -> Result<()> {
        let counts = [self.input_dim, self.output_dim, self.classes];
        if counts.contains(&0) || self.hidden.contains(&0) || self.proxies_per_class == Some(0) {
            return Err(Error::Config(
                "all layer widths and counts must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Widths from input to output: `[input_dim, hidden.., output_dim]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }

    /// Blocks in flattening order: encoder layers (weight then bias),
    /// classifier weight, classifier bias, proxies.
    pub fn blocks(&self) -> Vec<Block> {
        let mut out = Vec::new();
        let mut at = 0;
        let mut push = |kind, len: usize| {
            out.push(Block {
                kind,
                range: at..at + len,
            });
            at += len;
        };
        for (l, pair) in self.widths().windows(2).enumerate() {
            push(BlockKind::EncoderWeight(l), pair[0] * pair[1]);
            push(BlockKind::EncoderBias(l), pair[1]);
        }
        push(BlockKind::ClassifierWeight, self.classes * self.output_dim);
        push(BlockKind::ClassifierBias, self.classes);
        if let Some(k) = self.proxies_per_class {
            push(BlockKind::Proxies, self.classes * k * self.output_dim);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.blocks().last().map_or(0, |b| b.range.end)
    }

    pub fn proxy_range(&self) -> Option<Range<usize>> {
        self.blocks()
            .into_iter()
            .find(|b| b.kind == BlockKind::Proxies)
            .map(|b| b.range)
    }
}

/// Flat parameters (or gradients) in the order given by the layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub layout: ModelLayout,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: ModelLayout, values: Vec<f64>) -> Result<Self> {
        layout.validate()?;
        if values.len() != layout.num_params() {
            return Err(Error::Dimension {
                expected: layout.num_params(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("parameters must be finite".into()));
        }
        Ok(ParamVector { layout, values })
    }

    pub fn zeros(layout: ModelLayout) -> Self {
        let n = layout.num_params();
        ParamVector {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Encoder, classifier and optional proxies.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    pub classifier: ClassifierParams,
    pub proxies: Option<ProxyMatrix>,
}

/// Activations kept by [`Model::forward`] for the backward pass:
/// `acts[0]` is the input batch, `acts[l + 1]` the output of layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    acts: Vec<Mat64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub embeddings: Mat64,
    pub logits: Mat64,
    pub cache: ForwardCache,
}

fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Mat64 {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols).map(|_| rng.uniform(-s, s)).collect();
    Mat64::new(rows, cols, values).expect("finite draws")
}

/// Glorot-uniform weights, zero biases, proxies on the unit sphere.
pub fn init_params(layout: &ModelLayout, rng: &mut Rng) -> Result<Model> {
    layout.validate()?;
    let widths = layout.widths();
    let layers = widths
        .windows(2)
        .map(|p| Dense {
            weight: glorot(p[1], p[0], rng),
            bias: vec![0.0; p[1]],
        })
        .collect();
    let encoder = EncoderParams::new(layers, layout.activation, layout.activate_output)?;
    let classifier = ClassifierParams {
        weight: glorot(layout.classes, layout.output_dim, rng),
        bias: vec![0.0; layout.classes],
    };
    let proxies = layout
        .proxies_per_class
        .map(|k| ProxyMatrix::random_unit(layout.classes, k, layout.output_dim, rng));
    Ok(Model {
        encoder,
        classifier,
        proxies,
    })
}

/// `x · wᵀ + b`
fn affine(x: &Mat64, w: &Mat64, b: &[f64]) -> Mat64 {
    let mut out = Mat64::zeros(x.rows(), w.rows());
    for i in 0..x.rows() {
        let xi = x.row(i);
        for (o, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = b[o] + dot_unchecked(xi, w.row(o));
        }
    }
    out
}

/// Accumulates `gᵀ · x` into `gw` (row-major, `out × in`) and the column sums
/// of `g` into `gb`. With `gx`, also writes `g · w` there.
fn affine_backward(
    g: &Mat64,
    x: &Mat64,
    w: &Mat64,
    gw: &mut [f64],
    gb: &mut [f64],
    mut gx: Option<&mut Mat64>,
) {
    let cols = x.cols();
    for i in 0..g.rows() {
        let xi = x.row(i);
        for (o, &go) in g.row(i).iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            gb[o] += go;
            axpy(go, xi, &mut gw[o * cols..(o + 1) * cols]);
            if let Some(gx) = gx.as_deref_mut() {
                axpy(go, w.row(o), gx.row_mut(i));
            }
        }
    }
}

impl Model {
    pub fn layout(&self) -> ModelLayout {
        let layers = &self.encoder.layers;
        ModelLayout {
            input_dim: self.encoder.input_dim(),
            hidden: layers[..layers.len() - 1]
                .iter()
                .map(|l| l.weight.rows())
                .collect(),
            output_dim: self.encoder.output_dim(),
            classes: self.classifier.weight.rows(),
            proxies_per_class: self.proxies.as_ref().map(ProxyMatrix::k),
            activation: self.encoder.activation,
            activate_output: self.encoder.activate_output,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.weight.rows()
    }

    pub fn flatten(&self) -> ParamVector {
        let layout = self.layout();
        let mut values = Vec::with_capacity(layout.num_params());
        for l in &self.encoder.layers {
            values.extend_from_slice(l.weight.as_slice());
            values.extend_from_slice(&l.bias);
        }
        values.extend_from_slice(self.classifier.weight.as_slice());
        values.extend_from_slice(&self.classifier.bias);
        if let Some(p) = &self.proxies {
            values.extend_from_slice(p.as_slice());
        }
        ParamVector { layout, values }
    }

    pub fn unflatten(params: &ParamVector) -> Result<Model> {
        let layout = &params.layout;
        layout.validate()?;
        if params.values.len() != layout.num_params() {
            return Err(Error::Dimension {
                expected: layout.num_params(),
                got: params.values.len(),
            });
        }
        let widths = layout.widths();
        let v = &params.values;
        let mut layers = Vec::new();
        let mut classifier_weight = None;
        let mut classifier_bias = None;
        let mut proxies = None;
        for b in layout.blocks() {
            let slice = v[b.range].to_vec();
            match b.kind {
                BlockKind::EncoderWeight(l) => layers.push(Dense {
                    weight: Mat64::new(widths[l + 1], widths[l], slice)?,
                    bias: Vec::new(),
                }),
                BlockKind::EncoderBias(l) => layers[l].bias = slice,
                BlockKind::ClassifierWeight => {
                    classifier_weight = Some(Mat64::new(layout.classes, layout.output_dim, slice)?)
                }
                BlockKind::ClassifierBias => classifier_bias = Some(slice),
                BlockKind::Proxies => {
                    proxies = Some(ProxyMatrix::new(
                        layout.classes,
                        layout.proxies_per_class.unwrap_or(0),
                        layout.output_dim,
                        slice,
                    )?)
                }
            }
        }
        Ok(Model {
            encoder: EncoderParams::new(layers, layout.activation, layout.activate_output)?,
            classifier: ClassifierParams {
                weight: classifier_weight.expect("layout always has a classifier"),
                bias: classifier_bias.expect("layout always has a classifier"),
            },
            proxies,
        })
    }

    /// Embeddings and logits for a batch of inputs (one per row).
    pub fn forward(&self, x: &Mat64) -> Result<Forward> {
        if x.cols() != self.encoder.input_dim() {
            return Err(Error::Dimension {
                expected: self.encoder.input_dim(),
                got: x.cols(),
            });
        }
        let act = self.encoder.activation;
        let mut acts = Vec::with_capacity(self.encoder.layers.len() + 1);
        acts.push(x.clone());
        for (l, layer) in self.encoder.layers.iter().enumerate() {
            let mut h = affine(&acts[l], &layer.weight, &layer.bias);
            if self.encoder.activated(l) {
                h.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            }
            acts.push(h);
        }
        let embeddings = acts.last().expect("at least one layer").clone();
        let logits = affine(&embeddings, &self.classifier.weight, &self.classifier.bias);
        Ok(Forward {
            embeddings,
            logits,
            cache: ForwardCache { acts },
        })
    }

    /// Reverse pass through both heads. The classifier's contribution to the
    /// embedding gradient is added to `grad_embeddings` before the encoder
    /// is differentiated. Returns the parameter gradient and the gradient
    /// with respect to the inputs.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_embeddings: &Mat64,
        grad_logits: &Mat64,
        grad_proxies: Option<&ProxyMatrix>,
    ) -> Result<(ParamVector, Mat64)> {
        let layers = &self.encoder.layers;
        if cache.acts.len() != layers.len() + 1 {
            return Err(Error::Dimension {
                expected: layers.len() + 1,
                got: cache.acts.len(),
            });
        }
        let emb = &cache.acts[layers.len()];
        let n = emb.rows();
        for (l, a) in cache.acts.iter().enumerate().skip(1) {
            if a.rows() != n || a.cols() != layers[l - 1].weight.rows() {
                return Err(Error::Dimension {
                    expected: layers[l - 1].weight.rows(),
                    got: a.cols(),
                });
            }
        }
        let expect = |m: &Mat64, cols: usize| -> Result<()> {
            if m.rows() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: m.rows(),
                });
            }
            if m.cols() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    got: m.cols(),
                });
            }
            Ok(())
        };
        expect(grad_embeddings, emb.cols())?;
        expect(grad_logits, self.num_classes())?;
        match (&self.proxies, grad_proxies) {
            (Some(p), Some(g)) if g.as_slice().len() != p.as_slice().len() => {
                return Err(Error::Dimension {
                    expected: p.as_slice().len(),
                    got: g.as_slice().len(),
                })
            }
            (None, Some(_)) => {
                return Err(Error::Config("model carries no proxies".into()));
            }
            _ => {}
        }

        let mut grads = ParamVector::zeros(self.layout());
        let blocks = grads.layout.blocks();
        let range = |kind: BlockKind| {
            blocks
                .iter()
                .find(|b| b.kind == kind)
                .map(|b| b.range.clone())
                .expect("block present in layout")
        };

        let mut g = grad_embeddings.clone();
        {
            let (cw, cb) = (
                range(BlockKind::ClassifierWeight),
                range(BlockKind::ClassifierBias),
            );
            let (head, tail) = grads.values.split_at_mut(cb.start);
            affine_backward(
                grad_logits,
                emb,
                &self.classifier.weight,
                &mut head[cw],
                &mut tail[..cb.len()],
                Some(&mut g),
            );
        }

        let act = self.encoder.activation;
        for l in (0..layers.len()).rev() {
            if self.encoder.activated(l) {
                let out = &cache.acts[l + 1];
                for (gv, &y) in g.as_mut_slice().iter_mut().zip(out.as_slice()) {
                    *gv *= act.derivative_from_output(y);
                }
            }
            let input = &cache.acts[l];
            let mut gx = Mat64::zeros(n, input.cols());
            let (wr, br) = (
                range(BlockKind::EncoderWeight(l)),
                range(BlockKind::EncoderBias(l)),
            );
            let (head, tail) = grads.values.split_at_mut(br.start);
            affine_backward(
                &g,
                input,
                &layers[l].weight,
                &mut head[wr],
                &mut tail[..br.len()],
                Some(&mut gx),
            );
            g = gx;
        }

        if let Some(gp) = grad_proxies {
            grads.values[range(BlockKind::Proxies)].copy_from_slice(gp.as_slice());
        }
        Ok((grads, g))
    }

    /// Combined objective on one batch and its gradient over all parameters.
    pub fn objective(
        &self,
        x: &Mat64,
        labels: &[usize],
        cfg: &CombinedConfig,
    ) -> Result<(CombinedOutput, ParamVector)> {
        let fwd = self.forward(x)?;
        let out = combined(
            &fwd.embeddings,
            labels,
            &fwd.logits,
            cfg,
            self.proxies.as_ref(),
        )?;
        let grad_logits = out
            .bundle
            .grad_logits
            .as_ref()
            .expect("combined always returns logit gradients");
        let (grads, _) = self.backward(
            &fwd.cache,
            &out.bundle.grad_embeddings,
            grad_logits,
            out.bundle.grad_proxies.as_ref(),
        )?;
        Ok((out, grads))
    }

    /// Predicted class per row (ties go to the lowest index).
    pub fn predict(&self, x: &Mat64) -> Result<Vec<usize>> {
        let fwd = self.forward(x)?;
        Ok(fwd.logits.iter_rows().map(argmax).collect())
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Maximum relative error between the analytic parameter gradient of the
/// combined objective and central differences over every parameter.
pub fn model_grad_check(
    model: &Model,
    x: &Mat64,
    labels: &[usize],
    cfg: &CombinedConfig,
    eps: f64,
) -> Result<f64> {
    check_epsilon(eps)?;
    let (_, analytic) = model.objective(x, labels, cfg)?;
    let base = model.flatten();
    let mut probe = base.clone();
    let numeric = numeric_gradient(base.values(), eps, |v| {
        probe.values.copy_from_slice(v);
        let m = Model::unflatten(&probe)?;
        let fwd = m.forward(x)?;
        combined(
            &fwd.embeddings,
            labels,
            &fwd.logits,
            cfg,
            m.proxies.as_ref(),
        )
        .map(|o| o.bundle.value)
    })?;
    Ok(max_relative_error(analytic.values(), &numeric))
}

pub fn save_checkpoint(params: &ParamVector, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(params).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamVector> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: ParamVector = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    ParamVector::new(raw.layout, raw.values)
}
