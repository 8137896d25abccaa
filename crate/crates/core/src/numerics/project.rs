//! Two-dimensional projections for plotting learned embeddings.

use serde::{Deserialize, Serialize};

use super::{axpy, dot_unchecked, norm, sq_dist, Mat64, Rng};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    Pca,
    Tsne,
}

impl std::str::FromStr for ProjectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(ProjectionMethod::Pca),
            "tsne" => Ok(ProjectionMethod::Tsne),
            other => Err(Error::Config(format!(
                "unknown projection method {other:?}"
            ))),
        }
    }
}

/// Exact t-SNE schedule.
#[derive(Debug, Clone, Copy)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
}

impl Default for TsneParams {
    fn default() -> Self {
        TsneParams {
            perplexity: 30.0,
            iterations: 500,
            learning_rate: 100.0,
            exaggeration: 4.0,
            exaggeration_iters: 100,
        }
    }
}

pub const MAX_TSNE_POINTS: usize = 5000;

/// Projects the rows of `points` to 2-D.
///
/// `pca` ignores `rng` and `perplexity`; its components are sign-fixed so the
/// largest-magnitude loading is positive.
pub fn project_2d(
    points: &Mat64,
    method: ProjectionMethod,
    rng: &mut Rng,
    perplexity: f64,
) -> Result<Mat64> {
    if points.rows() < 3 {
        return Err(Error::Domain(format!(
            "need at least 3 points to project, got {}",
            points.rows()
        )));
    }
    match method {
        ProjectionMethod::Pca => pca_2d(points),
        ProjectionMethod::Tsne => tsne_2d(
            points,
            rng,
            &TsneParams {
                perplexity,
                ..TsneParams::default()
            },
        ),
    }
}

fn centered(points: &Mat64) -> Mat64 {
    let (n, d) = (points.rows(), points.cols());
    let mut mu = vec![0.0; d];
    for r in points.iter_rows() {
        axpy(1.0, r, &mut mu);
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);
    let mut x = points.clone();
    for i in 0..n {
        for (v, m) in x.row_mut(i).iter_mut().zip(&mu) {
            *v -= m;
        }
    }
    x
}

/// `Xᵀ X v` without forming the covariance.
fn gram_apply(x: &Mat64, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.cols()];
    for r in x.iter_rows() {
        let s = dot_unchecked(r, v);
        axpy(s, r, &mut out);
    }
    out
}

fn orthonormalize(a: &mut [f64], b: &mut [f64]) {
    let na = norm(a);
    if na > 0.0 {
        a.iter_mut().for_each(|x| *x /= na);
    }
    let b_norm = norm(b);
    // Two Gram-Schmidt passes; near-parallel inputs need the second.
    for _ in 0..2 {
        let p = dot_unchecked(a, b);
        axpy(-p, a, b);
    }
    if norm(b) <= 1e-10 * b_norm.max(f64::MIN_POSITIVE) {
        // b carried no independent direction: use the axis least aligned with a.
        let j = (0..a.len())
            .min_by(|&i, &k| a[i].abs().total_cmp(&a[k].abs()))
            .unwrap_or(0);
        b.iter_mut().for_each(|x| *x = 0.0);
        b[j] = 1.0;
        for _ in 0..2 {
            let p = dot_unchecked(a, b);
            axpy(-p, a, b);
        }
    }
    let nb = norm(b);
    if nb > 0.0 {
        b.iter_mut().for_each(|x| *x /= nb);
    }
}

fn pca_2d(points: &Mat64) -> Result<Mat64> {
    let x = centered(points);
    let d = x.cols();
    if d == 0 {
        return Err(Error::Degenerate("points have zero dimension".into()));
    }

    let (mut u, mut v) = (vec![0.0; d], vec![0.0; d]);
    if d == 1 {
        u[0] = 1.0;
    } else {
        // Fixed start keeps the projection independent of any caller rng.
        let mut r = Rng::new(0x0005_eed0_f9ca);
        u.iter_mut().for_each(|e| *e = r.gaussian());
        v.iter_mut().for_each(|e| *e = r.gaussian());
        orthonormalize(&mut u, &mut v);
        // Subspace iteration on the top-2 eigenspace of XᵀX.
        for _ in 0..2000 {
            let mut nu = gram_apply(&x, &u);
            let mut nv = gram_apply(&x, &v);
            if norm(&nu) == 0.0 && norm(&nv) == 0.0 {
                break;
            }
            orthonormalize(&mut nu, &mut nv);
            let change = 2.0 - dot_unchecked(&nu, &u).abs() - dot_unchecked(&nv, &v).abs();
            u = nu;
            v = nv;
            if change < 1e-15 {
                break;
            }
        }
        // Rayleigh-Ritz: diagonalize the 2×2 projected matrix.
        let au = gram_apply(&x, &u);
        let av = gram_apply(&x, &v);
        let (a, b, c) = (
            dot_unchecked(&u, &au),
            dot_unchecked(&u, &av),
            dot_unchecked(&v, &av),
        );
        let theta = 0.5 * (2.0 * b).atan2(a - c);
        let (s, co) = theta.sin_cos();
        let e1: Vec<f64> = u.iter().zip(&v).map(|(p, q)| co * p + s * q).collect();
        let e2: Vec<f64> = u.iter().zip(&v).map(|(p, q)| -s * p + co * q).collect();
        u = e1;
        v = e2;
    }

    for comp in [&mut u, &mut v] {
        let lead = comp
            .iter()
            .copied()
            .fold(0.0f64, |m, e| if e.abs() > m.abs() { e } else { m });
        if lead < 0.0 {
            comp.iter_mut().for_each(|e| *e = -*e);
        }
    }

    let mut out = Mat64::zeros(x.rows(), 2);
    for (i, r) in x.iter_rows().enumerate() {
        out[(i, 0)] = dot_unchecked(r, &u);
        out[(i, 1)] = if d == 1 { 0.0 } else { dot_unchecked(r, &v) };
    }
    Ok(out)
}

/// Per-point Gaussian conditionals matched to `perplexity` by bisection on
/// the precision, then symmetrized.
fn affinities(points: &Mat64, perplexity: f64) -> Vec<f64> {
    let n = points.rows();
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s = sq_dist(points.row(i), points.row(j));
            d2[i * n + j] = s;
            d2[j * n + i] = s;
        }
    }

    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        let di = &d2[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
        for _ in 0..200 {
            let dmin = di
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &v)| v)
                .fold(f64::INFINITY, f64::min);
            let mut sum = 0.0;
            let mut wsum = 0.0;
            for j in 0..n {
                row[j] = if j == i {
                    0.0
                } else {
                    (-(di[j] - dmin) * beta).exp()
                };
                sum += row[j];
                wsum += row[j] * (di[j] - dmin);
            }
            // Shannon entropy of the normalized row (natural log).
            let h = sum.ln() + beta * wsum / sum;
            let diff = h - target;
            if diff.abs() < 1e-10 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() {
                    (beta + hi) / 2.0
                } else {
                    beta * 2.0
                };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        let sum: f64 = row.iter().sum();
        for j in 0..n {
            p[i * n + j] = row[j] / sum;
        }
    }

    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    sym
}

/// Exact O(n²) t-SNE with momentum and per-coordinate gains.
///
/// The learning rate is capped at `n / (4·exaggeration)`.
pub fn tsne_2d(points: &Mat64, rng: &mut Rng, params: &TsneParams) -> Result<Mat64> {
    let n = points.rows();
    if n < 3 {
        return Err(Error::Domain(format!("need at least 3 points, got {n}")));
    }
    if n > MAX_TSNE_POINTS {
        return Err(Error::Domain(format!(
            "exact t-SNE supports at most {MAX_TSNE_POINTS} points, got {n}"
        )));
    }
    if !(params.perplexity > 0.0 && params.perplexity < n as f64) {
        return Err(Error::Domain(format!(
            "perplexity {} must lie in (0, {n})",
            params.perplexity
        )));
    }

    let p = affinities(points, params.perplexity);
    let mut y: Vec<f64> = (0..2 * n).map(|_| 1e-4 * rng.gaussian()).collect();
    let mut vel = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; 2 * n];
    // Steps above n / (4·exaggeration) overshoot and diverge on small inputs.
    let lr = params
        .learning_rate
        .min(n as f64 / (4.0 * params.exaggeration.max(1.0)));

    for it in 0..params.iterations {
        let exag = if it < params.exaggeration_iters {
            params.exaggeration
        } else {
            1.0
        };
        let momentum = if it < 250 { 0.5 } else { 0.8 };

        let mut zsum = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                zsum += 2.0 * q;
            }
        }

        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[i * n + j];
                let m = 4.0 * (exag * p[i * n + j] - q / zsum) * q;
                grad[2 * i] += m * (y[2 * i] - y[2 * j]);
                grad[2 * i + 1] += m * (y[2 * i + 1] - y[2 * j + 1]);
            }
        }

        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (vel[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(0.01)
            };
            vel[k] = momentum * vel[k] - lr * gains[k] * grad[k];
            y[k] += vel[k];
        }

        for c in 0..2 {
            let m = (0..n).map(|i| y[2 * i + c]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + c] -= m);
        }
    }

    Mat64::new(n, 2, y)
}
