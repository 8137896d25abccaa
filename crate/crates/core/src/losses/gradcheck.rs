//! Central finite-difference verification of the analytic loss gradients.

use super::{
    cce, combined, softtriple, supcon, CombinedConfig, DmlConfig, LossBundle, ProxyMatrix,
    SoftTripleConfig, SupConConfig,
};
use crate::error::{Error, Result};
use crate::numerics::{Mat64, Rng};

/// A loss together with the inputs it is evaluated on.
#[derive(Debug, Clone)]
pub enum LossInput {
    Cce {
        logits: Mat64,
        labels: Vec<usize>,
    },
    SupCon {
        embeddings: Mat64,
        labels: Vec<usize>,
        cfg: SupConConfig,
        normalize: bool,
    },
    SoftTriple {
        embeddings: Mat64,
        labels: Vec<usize>,
        proxies: ProxyMatrix,
        cfg: SoftTripleConfig,
        normalize: bool,
    },
    Combined {
        embeddings: Mat64,
        labels: Vec<usize>,
        logits: Mat64,
        cfg: CombinedConfig,
        proxies: Option<ProxyMatrix>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Group {
    Embeddings,
    Logits,
    Proxies,
}

impl Group {
    fn name(self) -> &'static str {
        match self {
            Group::Embeddings => "embeddings",
            Group::Logits => "logits",
            Group::Proxies => "proxies",
        }
    }
}

impl LossInput {
    pub fn evaluate(&self) -> Result<LossBundle> {
        match self {
            LossInput::Cce { logits, labels } => cce(logits, labels),
            LossInput::SupCon {
                embeddings,
                labels,
                cfg,
                normalize,
            } => supcon(embeddings, labels, cfg, *normalize),
            LossInput::SoftTriple {
                embeddings,
                labels,
                proxies,
                cfg,
                normalize,
            } => softtriple(embeddings, labels, proxies, cfg, *normalize),
            LossInput::Combined {
                embeddings,
                labels,
                logits,
                cfg,
                proxies,
            } => combined(embeddings, labels, logits, cfg, proxies.as_ref()).map(|o| o.bundle),
        }
    }

    fn groups(&self) -> Vec<Group> {
        match self {
            LossInput::Cce { .. } => vec![Group::Logits],
            LossInput::SupCon { .. } => vec![Group::Embeddings],
            LossInput::SoftTriple { .. } => vec![Group::Embeddings, Group::Proxies],
            LossInput::Combined { proxies, .. } => {
                let mut g = vec![Group::Embeddings, Group::Logits];
                if proxies.is_some() {
                    g.push(Group::Proxies);
                }
                g
            }
        }
    }

    fn values_mut(&mut self, group: Group) -> &mut [f64] {
        match (self, group) {
            (LossInput::Cce { logits, .. }, Group::Logits)
            | (LossInput::Combined { logits, .. }, Group::Logits) => logits.as_mut_slice(),
            (LossInput::SupCon { embeddings, .. }, Group::Embeddings)
            | (LossInput::SoftTriple { embeddings, .. }, Group::Embeddings)
            | (LossInput::Combined { embeddings, .. }, Group::Embeddings) => {
                embeddings.as_mut_slice()
            }
            (LossInput::SoftTriple { proxies, .. }, Group::Proxies) => proxies.as_mut_slice(),
            (
                LossInput::Combined {
                    proxies: Some(p), ..
                },
                Group::Proxies,
            ) => p.as_mut_slice(),
            _ => unreachable!("group not present for this loss"),
        }
    }

    /// Random instance with `n` rows, dimension `d`, `c` classes and `k`
    /// proxies per class. `kind` is one of `cce`, `supcon`, `softtriple`,
    /// or `combined-supcon` / `combined-softtriple` (β given by `beta`).
    pub fn random(
        kind: &str,
        n: usize,
        d: usize,
        c: usize,
        k: usize,
        beta: f64,
        rng: &mut Rng,
    ) -> Result<LossInput> {
        if n == 0 || d == 0 || c == 0 || k == 0 {
            return Err(Error::Config("sizes must be at least 1".into()));
        }
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let mut gauss = |r: usize, cols: usize| {
            Mat64::new(r, cols, (0..r * cols).map(|_| rng.gaussian()).collect())
                .expect("finite draws")
        };
        let embeddings = gauss(n, d);
        let logits = gauss(n, c);
        let st = SoftTripleConfig {
            k,
            gamma: 0.1,
            lambda: 4.0,
            delta: 0.7,
        };
        let sc = SupConConfig { tau: 0.6 };
        Ok(match kind {
            "cce" => LossInput::Cce { logits, labels },
            "supcon" => LossInput::SupCon {
                embeddings,
                labels,
                cfg: sc,
                normalize: true,
            },
            "softtriple" => LossInput::SoftTriple {
                embeddings,
                labels,
                proxies: ProxyMatrix::random_unit(c, k, d, rng),
                cfg: st,
                normalize: true,
            },
            "combined-supcon" => LossInput::Combined {
                embeddings,
                labels,
                logits,
                cfg: CombinedConfig {
                    beta,
                    dml: DmlConfig::SupCon(sc),
                    normalize: true,
                },
                proxies: None,
            },
            "combined-softtriple" => LossInput::Combined {
                embeddings,
                labels,
                logits,
                cfg: CombinedConfig {
                    beta,
                    dml: DmlConfig::SoftTriple(st),
                    normalize: true,
                },
                proxies: Some(ProxyMatrix::random_unit(c, k, d, rng)),
            },
            other => return Err(Error::Config(format!("unknown loss kind {other:?}"))),
        })
    }
}

/// Maximum relative error per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

/// `|a − n| / max(1, |a|, |n|)`
#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

pub fn check_epsilon(eps: f64) -> Result<()> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!(
            "epsilon must lie in [1e-7, 1e-3], got {eps}"
        )));
    }
    Ok(())
}

/// Central differences of `f` around `x`, coordinate by coordinate.
pub fn numeric_gradient(
    x: &[f64],
    eps: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&probe)?;
        probe[i] = orig - eps;
        let minus = f(&probe)?;
        probe[i] = orig;
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

/// Compares every analytic gradient of `input` with central differences.
pub fn grad_check(input: &LossInput, eps: f64) -> Result<GradCheckReport> {
    check_epsilon(eps)?;
    let bundle = input.evaluate()?;
    let mut groups = Vec::new();
    for group in input.groups() {
        let analytic: Vec<f64> = match group {
            Group::Embeddings => bundle.grad_embeddings.as_slice().to_vec(),
            Group::Logits => bundle
                .grad_logits
                .as_ref()
                .expect("loss reads logits")
                .as_slice()
                .to_vec(),
            Group::Proxies => bundle
                .grad_proxies
                .as_ref()
                .expect("loss reads proxies")
                .as_slice()
                .to_vec(),
        };
        let mut probe = input.clone();
        let base = probe.values_mut(group).to_vec();
        let numeric = numeric_gradient(&base, eps, |x| {
            probe.values_mut(group).copy_from_slice(x);
            probe.evaluate().map(|b| b.value)
        })?;
        groups.push((
            group.name().to_string(),
            max_relative_error(&analytic, &numeric),
        ));
    }
    Ok(GradCheckReport { groups })
}
