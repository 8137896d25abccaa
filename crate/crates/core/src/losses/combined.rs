use serde::{Deserialize, Serialize};

use super::{cce, softtriple, supcon, LossBundle, ProxyMatrix, SoftTripleConfig, SupConConfig};
use crate::error::{Error, Result};
use crate::numerics::Mat64;

/// The metric-learning term mixed into the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DmlConfig {
    None,
    SupCon(SupConConfig),
    SoftTriple(SoftTripleConfig),
}

impl DmlConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DmlConfig::None => "cce",
            DmlConfig::SupCon(_) => "supcon",
            DmlConfig::SoftTriple(_) => "softtriple",
        }
    }
}

/// `β·CCE + (1 − β)·DML`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedConfig {
    pub beta: f64,
    pub dml: DmlConfig,
    /// Project embeddings to the unit sphere before the DML term.
    #[serde(default = "default_normalize")]
    pub normalize: bool,
}

fn default_normalize() -> bool {
    true
}

impl CombinedConfig {
    pub fn cce_only() -> Self {
        CombinedConfig {
            beta: 1.0,
            dml: DmlConfig::None,
            normalize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        match &self.dml {
            DmlConfig::None if self.beta != 1.0 => Err(Error::Config(
                "beta must be 1 when no metric-learning term is configured".into(),
            )),
            DmlConfig::None => Ok(()),
            DmlConfig::SupCon(c) => c.validate(),
            DmlConfig::SoftTriple(c) => c.validate(),
        }
    }
}

/// Combined bundle plus the two unweighted parts.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedOutput {
    pub bundle: LossBundle,
    pub cce: f64,
    /// The metric-learning part as mixed in: SupCon is divided by the number
    /// of contributing anchors, SoftTriple is already a batch mean.
    pub dml: f64,
}

/// Evaluates the mixed objective over one batch.
///
/// `proxies` must be present exactly when the DML term is SoftTriple. The
/// DML term is not evaluated at `β = 1`. A SupCon batch with fewer than two
/// rows, or without any same-class pair, contributes a DML part of 0.
pub fn combined(
    embeddings: &Mat64,
    labels: &[usize],
    logits: &Mat64,
    cfg: &CombinedConfig,
    proxies: Option<&ProxyMatrix>,
) -> Result<CombinedOutput> {
    cfg.validate()?;
    let n = embeddings.rows();
    if logits.rows() != n {
        return Err(Error::Dimension {
            expected: n,
            got: logits.rows(),
        });
    }
    match (&cfg.dml, proxies) {
        (DmlConfig::SoftTriple(_), None) => {
            return Err(Error::Config("softtriple needs a proxy matrix".into()))
        }
        (DmlConfig::None | DmlConfig::SupCon(_), Some(_)) => {
            return Err(Error::Config(
                "proxies are only used by the softtriple term".into(),
            ))
        }
        _ => {}
    }

    let ce = cce(logits, labels)?;
    let beta = cfg.beta;
    let mut grad_logits = ce.grad_logits.expect("cce always returns logit gradients");
    grad_logits.scale(beta);

    let mut grad_embeddings = Mat64::zeros(n, embeddings.cols());
    let mut grad_proxies = proxies.map(|p| ProxyMatrix::zeros(p.classes(), p.k(), p.dim()));
    let mut dml_value = 0.0;
    let mut skipped = 0;

    if beta < 1.0 {
        let w = 1.0 - beta;
        match (&cfg.dml, proxies) {
            (DmlConfig::SupCon(sc), _) => {
                if n < 2 {
                    skipped = n;
                } else {
                    let b = supcon(embeddings, labels, sc, cfg.normalize)?;
                    skipped = b.skipped_anchors;
                    let anchors = n - b.skipped_anchors;
                    if anchors > 0 {
                        let scale = 1.0 / anchors as f64;
                        dml_value = b.value * scale;
                        grad_embeddings = b.grad_embeddings;
                        grad_embeddings.scale(w * scale);
                    }
                }
            }
            (DmlConfig::SoftTriple(st), Some(p)) => {
                let b = softtriple(embeddings, labels, p, st, cfg.normalize)?;
                dml_value = b.value;
                grad_embeddings = b.grad_embeddings;
                grad_embeddings.scale(w);
                let mut gp = b.grad_proxies.expect("softtriple returns proxy gradients");
                gp.scale(w);
                grad_proxies = Some(gp);
            }
            _ => unreachable!("validated above"),
        }
    }

    Ok(CombinedOutput {
        bundle: LossBundle {
            value: beta * ce.value + (1.0 - beta) * dml_value,
            grad_embeddings,
            grad_proxies,
            grad_logits: Some(grad_logits),
            skipped_anchors: skipped,
        },
        cce: ce.value,
        dml: dml_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Mat64 {
        Mat64::new(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gaussian()).collect(),
        )
        .unwrap()
    }

    fn st() -> SoftTripleConfig {
        SoftTripleConfig {
            k: 2,
            gamma: 0.1,
            lambda: 4.0,
            delta: 0.7,
        }
    }

    #[test]
    fn beta_one_reduces_to_cce() {
        let mut rng = Rng::new(3);
        let (e, l) = (random(5, 3, &mut rng), random(5, 2, &mut rng));
        let labels = [0, 1, 1, 0, 1];
        let p = ProxyMatrix::random_unit(2, 2, 3, &mut rng);
        let cfg = CombinedConfig {
            beta: 1.0,
            dml: DmlConfig::SoftTriple(st()),
            normalize: true,
        };
        let out = combined(&e, &labels, &l, &cfg, Some(&p)).unwrap();
        let ce = cce(&l, &labels).unwrap();
        assert_eq!(out.bundle.value, ce.value);
        assert_eq!(out.bundle.grad_logits, ce.grad_logits);
        assert!(out
            .bundle
            .grad_embeddings
            .as_slice()
            .iter()
            .all(|&g| g == 0.0));
        assert!(out
            .bundle
            .grad_proxies
            .unwrap()
            .as_slice()
            .iter()
            .all(|&g| g == 0.0));
        assert_eq!(out.dml, 0.0);
    }

    #[test]
    fn mixing_arithmetic() {
        // β·cce + (1 − β)·dml with cce = 1.0 and dml = 0.5
        let beta: f64 = 0.4;
        assert!((beta * 1.0 + (1.0 - beta) * 0.5 - 0.7).abs() < 1e-15);

        let mut rng = Rng::new(4);
        let (e, l) = (random(6, 3, &mut rng), random(6, 2, &mut rng));
        let labels = [0, 1, 1, 0, 1, 0];
        let cfg = CombinedConfig {
            beta,
            dml: DmlConfig::SupCon(SupConConfig { tau: 0.6 }),
            normalize: true,
        };
        let out = combined(&e, &labels, &l, &cfg, None).unwrap();
        assert!((out.bundle.value - (0.4 * out.cce + 0.6 * out.dml)).abs() < 1e-15);
        let raw = supcon(&e, &labels, &SupConConfig { tau: 0.6 }, true).unwrap();
        assert!((out.dml - raw.value / 6.0).abs() < 1e-15);
    }

    #[test]
    fn beta_zero_decouples_logits() {
        let mut rng = Rng::new(5);
        let (e, l) = (random(4, 3, &mut rng), random(4, 2, &mut rng));
        let p = ProxyMatrix::random_unit(2, 2, 3, &mut rng);
        let cfg = CombinedConfig {
            beta: 0.0,
            dml: DmlConfig::SoftTriple(st()),
            normalize: true,
        };
        let out = combined(&e, &[0, 1, 0, 1], &l, &cfg, Some(&p)).unwrap();
        assert!(out
            .bundle
            .grad_logits
            .unwrap()
            .as_slice()
            .iter()
            .all(|&g| g == 0.0));
        assert_eq!(out.bundle.value, out.dml);
    }

    #[test]
    fn supcon_singleton_batch_contributes_zero() {
        let e = Mat64::from_rows(&[[1.0, 2.0]]).unwrap();
        let l = Mat64::from_rows(&[[0.5, -0.5]]).unwrap();
        let cfg = CombinedConfig {
            beta: 0.9,
            dml: DmlConfig::SupCon(SupConConfig { tau: 0.6 }),
            normalize: true,
        };
        let out = combined(&e, &[1], &l, &cfg, None).unwrap();
        assert_eq!(out.dml, 0.0);
        assert_eq!(out.bundle.skipped_anchors, 1);
    }

    #[test]
    fn config_errors() {
        let e = Mat64::zeros(2, 2);
        let l = Mat64::zeros(2, 2);
        let mut cfg = CombinedConfig {
            beta: 0.5,
            dml: DmlConfig::SoftTriple(st()),
            normalize: true,
        };
        assert!(combined(&e, &[0, 1], &l, &cfg, None).is_err());
        cfg.beta = 1.5;
        assert!(cfg.validate().is_err());
        cfg = CombinedConfig {
            beta: 0.5,
            dml: DmlConfig::None,
            normalize: true,
        };
        assert!(cfg.validate().is_err());
    }
}
