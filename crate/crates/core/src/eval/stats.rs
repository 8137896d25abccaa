use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest combined sample size for which the exact null distribution is
/// enumerated.
pub const EXACT_LIMIT: usize = 12;

/// 1-based ranks with ties sharing their average rank.
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && xs[idx[end]] == xs[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U for the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub exact: bool,
}

/// `counts[u]` = number of arrangements of `m` and `n` untied values whose
/// first-sample statistic equals `u`.
fn u_distribution(m: usize, n: usize) -> Vec<u64> {
    // f[i][j][u] via f(i, j) = f(i - 1, j) shifted by j  +  f(i, j - 1)
    let max_u = m * n;
    let mut table = vec![vec![Vec::<u64>::new(); n + 1]; m + 1];
    for i in 0..=m {
        for j in 0..=n {
            let mut f = vec![0u64; max_u + 1];
            if i == 0 || j == 0 {
                f[0] = 1;
            } else {
                for (u, slot) in f.iter_mut().enumerate().take(i * j + 1) {
                    let take_a = if u >= j {
                        table[i - 1][j].get(u - j).copied().unwrap_or(0)
                    } else {
                        0
                    };
                    let take_b = table[i][j - 1].get(u).copied().unwrap_or(0);
                    *slot = take_a + take_b;
                }
            }
            table[i][j] = f;
        }
    }
    std::mem::take(&mut table[m][n])
}

/// Mann-Whitney U test of `a` against `b`.
///
/// Ties get midranks. The two-sided p-value is exact (from integer counts of
/// the null distribution) when `|a| + |b| ≤ 12` and nothing is tied, and
/// otherwise comes from the normal approximation with tie and continuity
/// corrections. It always lies in (0, 1].
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain(
            "mann-whitney needs two non-empty samples".into(),
        ));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Domain("mann-whitney samples must be finite".into()));
    }
    let (m, n) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let rank_sum: f64 = ranks[..m].iter().sum();
    let u = rank_sum - (m * (m + 1)) as f64 / 2.0;

    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut has_ties = false;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        if j - i > 1 {
            has_ties = true;
            tie_term += t * t * t - t;
        }
        i = j;
    }

    if m + n <= EXACT_LIMIT && !has_ties {
        let counts = u_distribution(m, n);
        let total: u64 = counts.iter().sum();
        let k = u as usize;
        let lower: u64 = counts[..=k].iter().sum();
        let upper: u64 = counts[k..].iter().sum();
        let p = (2 * lower.min(upper)) as f64 / total as f64;
        return Ok(MannWhitney {
            u,
            p: p.min(1.0),
            exact: true,
        });
    }

    let (mf, nf) = (m as f64, n as f64);
    let big_n = mf + nf;
    let var = mf * nf / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mf * nf / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2)
    };
    Ok(MannWhitney {
        u,
        p: p.clamp(f64::MIN_POSITIVE, 1.0),
        exact: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    #[default]
    MannWhitney,
    PairedT,
}

impl FromStr for TestMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mann_whitney" | "mann-whitney" | "mwu" => Ok(TestMethod::MannWhitney),
            "paired_t" | "paired-t" | "t" => Ok(TestMethod::PairedT),
            other => Err(Error::Config(format!("unknown test {other:?}"))),
        }
    }
}

impl fmt::Display for TestMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestMethod::MannWhitney => "mann_whitney",
            TestMethod::PairedT => "paired_t",
        })
    }
}

/// Two-sided paired t-test. All-zero differences give p = 1.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Domain(
            "paired t-test needs at least two pairs".into(),
        ));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().all(|&v| v == 0.0) {
        return Ok(1.0);
    }
    let n = d.len() as f64;
    let mean = crate::numerics::mean(&d);
    let sd = crate::numerics::std_dev(&d);
    if sd == 0.0 {
        return Ok(0.0);
    }
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::Domain(e.to_string()))?;
    Ok((2.0 * dist.sf(t.abs())).min(1.0))
}

/// Two-sided p-value comparing per-fold scores of two models.
pub fn compare_models(a: &[f64], b: &[f64], method: TestMethod) -> Result<f64> {
    match method {
        TestMethod::MannWhitney => mann_whitney_u(a, b).map(|r| r.p),
        TestMethod::PairedT => paired_t(a, b),
    }
}
