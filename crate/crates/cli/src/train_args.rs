use std::path::PathBuf;

use clap::Args;
use dmlshot_core::losses::DmlConfig;
use dmlshot_core::model::Activation;
use dmlshot_core::trainer::{load_config, preset, TrainConfig};

use crate::Failure;

/// Training flags shared by `train`, `cv` and `sweep`.
///
/// Without `--config` the starting point is the size-dependent preset of
/// `--loss`. With `--config` the file is the starting point and `--loss`
/// swaps in the preset loss for that size. Every other flag overrides both.
#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// TOML file with TrainConfig keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// cce, supcon or softtriple.
    #[arg(long, value_parser = ["cce", "supcon", "softtriple"])]
    pub loss: Option<String>,
    /// Weight of the cross-entropy term.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Proxies per class.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_frac: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Comma-separated hidden widths; empty for none.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn parse_list<T: std::str::FromStr>(flag: &str, s: &str) -> Result<Vec<T>, Failure> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Failure::Usage(format!("--{flag}: cannot parse {t:?}")))
        })
        .collect()
}

impl TrainArgs {
    /// Final configuration for a training set of `train_size` examples.
    /// `loss` replaces `--loss` when given.
    pub fn resolve(&self, train_size: usize, loss: Option<&str>) -> Result<TrainConfig, Failure> {
        let loss = loss.or(self.loss.as_deref());
        let mut cfg = match &self.config {
            Some(path) => {
                let mut cfg = load_config(path).map_err(|e| Failure::Usage(e.to_string()))?;
                if let Some(l) = loss {
                    cfg.loss = preset(l, train_size)?.loss;
                }
                cfg
            }
            None => preset(loss.unwrap_or("cce"), train_size)?,
        };

        if let Some(b) = self.beta {
            cfg.loss.beta = b;
        }
        match &mut cfg.loss.dml {
            DmlConfig::SupCon(sc) => {
                if let Some(t) = self.tau {
                    sc.tau = t;
                }
            }
            DmlConfig::SoftTriple(st) => {
                if let Some(k) = self.k {
                    st.k = k;
                }
                if let Some(g) = self.gamma {
                    st.gamma = g;
                }
                if let Some(l) = self.lambda {
                    st.lambda = l;
                }
                if let Some(d) = self.delta {
                    st.delta = d;
                }
            }
            DmlConfig::None => {}
        }
        let name = cfg.loss.dml.name();
        if self.tau.is_some() && name != "supcon" {
            return Err(Failure::Usage(format!(
                "--tau needs the supcon loss, not {name}"
            )));
        }
        let st_flags = [
            self.k.is_some(),
            self.gamma.is_some(),
            self.lambda.is_some(),
            self.delta.is_some(),
        ];
        if st_flags.contains(&true) && name != "softtriple" {
            return Err(Failure::Usage(format!(
                "--k/--gamma/--lambda/--delta need the softtriple loss, not {name}"
            )));
        }

        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.base_lr = v;
        }
        if let Some(v) = self.warmup_frac {
            cfg.warmup_frac = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(h) = &self.hidden {
            cfg.hidden = parse_list("hidden", h)?;
        }
        if let Some(v) = self.embedding_dim {
            cfg.embedding_dim = v;
        }
        if let Some(v) = self.activation {
            cfg.activation = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
