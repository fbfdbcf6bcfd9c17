//! Exact t-SNE and the scatter files it is inspected through.
//!
//! Affinities come from per-point Gaussian bandwidths fitted by bisection to
//! a target perplexity; the embedding follows exact gradients of
//! `KL(P || Q)` under a Student-t kernel with the usual early exaggeration,
//! momentum switch and adaptive gains. Coordinates are only meaningful up to
//! rigid motion, so compare distances or [`silhouette`], never raw values.

mod plot;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use plot::{read_embedding_csv, write_embedding_csv, write_embedding_svg, write_trace_csv, EmbeddedPoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TsneInit {
    /// Top two principal components, scaled to a small spread.
    Pca,
    /// Isotropic Gaussian with standard deviation 1e-4.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    /// `None` resolves to `min(30, (n - 1) / 3)`.
    pub perplexity: Option<f64>,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub init: TsneInit,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: None,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            init: TsneInit::Pca,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn resolved_perplexity(&self, n: usize) -> f64 {
        self.perplexity.unwrap_or_else(|| 30f64.min((n as f64 - 1.0) / 3.0))
    }
}

/// Coordinates plus `kl_trace[t]`, the objective under the unexaggerated
/// affinities after update `t + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TsneResult {
    pub embedding: Array2<f64>,
    pub kl_trace: Vec<f64>,
    pub perplexity: f64,
    pub config: TsneConfig,
}

const PERPLEXITY_TOL: f64 = 1e-5;
const MAX_BISECTION: usize = 64;

fn squared_distances(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..i {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Fills `p` with `exp(-beta (d - d_min))` normalized over `j != i`, and
/// returns the perplexity `exp(H)` of the row.
fn row_at(d: &[f64], i: usize, dmin: f64, beta: f64, p: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for (j, (pj, &dj)) in p.iter_mut().zip(d).enumerate() {
        *pj = if j == i { 0.0 } else { (-beta * (dj - dmin)).exp() };
        sum += *pj;
    }
    let mut h = 0.0;
    for pj in p.iter_mut() {
        *pj /= sum;
        if *pj > 0.0 {
            h -= *pj * pj.ln();
        }
    }
    h.exp()
}

/// Conditional affinities `p_{j|i}`, one row per point, each at the target
/// perplexity. Perplexity falls as `beta` grows, so the search first doubles
/// or halves `beta` to bracket the target and then bisects.
pub fn conditional_affinities(x: ArrayView2<f64>, perplexity: f64) -> Result<Array2<f64>> {
    let n = x.nrows();
    let d = squared_distances(x);
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        let row: Vec<f64> = d.row(i).to_vec();
        let dmin = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
        let spread = (0..n).filter(|&j| j != i).map(|j| row[j] - dmin).fold(0.0, f64::max);
        let mut beta = if spread > 0.0 { 1.0 / spread } else { 1.0 };
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut out = vec![0.0; n];
        let mut ok = false;
        for _ in 0..MAX_BISECTION {
            let perp = row_at(&row, i, dmin, beta, &mut out);
            if (perp - perplexity).abs() <= PERPLEXITY_TOL {
                ok = true;
                break;
            }
            if perp > perplexity {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (lo + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (lo + hi);
            }
        }
        if !ok {
            return Err(Error::Numerical(format!(
                "perplexity bisection did not converge for row {i} (target {perplexity})"
            )));
        }
        p.row_mut(i).assign(&ndarray::ArrayView1::from(&out));
    }
    Ok(p)
}

/// Symmetrized joint affinities `(p_{j|i} + p_{i|j}) / 2n`.
pub fn joint_affinities(x: ArrayView2<f64>, perplexity: f64) -> Result<Array2<f64>> {
    let c = conditional_affinities(x, perplexity)?;
    let n = c.nrows() as f64;
    Ok((&c + &c.t()) / (2.0 * n))
}

fn pca_init(x: ArrayView2<f64>, seed: u64) -> Array2<f64> {
    let n = x.nrows();
    let mean = x.mean_axis(Axis(0)).expect("n >= 1");
    let xc = &x - &mean;
    let cov = xc.t().dot(&xc);
    let d = cov.nrows();
    let mut r = rng::derive(seed, 0);
    let mut comps: Vec<ndarray::Array1<f64>> = Vec::new();
    for _ in 0..2 {
        let mut v = ndarray::Array1::from_shape_fn(d, |_| r.sample::<f64, _>(StandardNormal));
        for _ in 0..200 {
            let mut w = cov.dot(&v);
            for c in &comps {
                let proj = w.dot(c);
                w.scaled_add(-proj, c);
            }
            let norm = w.dot(&w).sqrt();
            if norm < 1e-300 {
                break;
            }
            v = w / norm;
        }
        comps.push(v);
    }
    let mut y = Array2::zeros((n, 2));
    for (k, c) in comps.iter().enumerate() {
        y.column_mut(k).assign(&xc.dot(c));
    }
    let std0 = y.column(0).std(0.0);
    if std0 > 0.0 {
        y /= std0;
    }
    y * 1e-4
}

/// KL(P || Q) for an embedding `y`, with `P` the joint affinities.
pub fn kl_divergence(p: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let n = y.nrows();
    let mut num = Array2::zeros((n, n));
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = (y[[i, 0]] - y[[j, 0]]).powi(2) + (y[[i, 1]] - y[[j, 1]]).powi(2);
                num[[i, j]] = 1.0 / (1.0 + d);
                z += num[[i, j]];
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[[i, j]];
            if i != j && pij > 0.0 {
                kl += pij * (pij / (num[[i, j]] / z).max(1e-300)).ln();
            }
        }
    }
    kl
}

/// Embeds the rows of `features` in two dimensions.
pub fn tsne_embed(features: ArrayView2<f64>, config: &TsneConfig) -> Result<TsneResult> {
    let n = features.nrows();
    if n < 4 {
        return Err(Error::Input(format!("t-SNE needs at least 4 points, got {n}")));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("t-SNE features contain non-finite values".into()));
    }
    let perplexity = config.resolved_perplexity(n);
    if !(perplexity > 1.0 && perplexity < n as f64) {
        return Err(Error::Config(format!("perplexity {perplexity} must lie in (1, {n})")));
    }
    if !(config.learning_rate > 0.0) || !(config.early_exaggeration >= 1.0) {
        return Err(Error::Config("learning_rate must be > 0 and early_exaggeration >= 1".into()));
    }
    let p = joint_affinities(features, perplexity)?;
    let mut y = match config.init {
        TsneInit::Pca => pca_init(features, config.seed),
        TsneInit::Random => {
            let mut r = rng::derive(config.seed, 1);
            Array2::from_shape_fn((n, 2), |_| 1e-4 * r.sample::<f64, _>(StandardNormal))
        }
    };
    let mut update = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut num = Array2::<f64>::zeros((n, n));
    let mut grad = Array2::<f64>::zeros((n, 2));
    let mut kl_trace = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let exag = if it < config.exaggeration_iterations {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < config.momentum_switch {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        let mut z = 0.0;
        for i in 0..n {
            for j in 0..i {
                let d = (y[[i, 0]] - y[[j, 0]]).powi(2) + (y[[i, 1]] - y[[j, 1]]).powi(2);
                let v = 1.0 / (1.0 + d);
                num[[i, j]] = v;
                num[[j, i]] = v;
                z += 2.0 * v;
            }
        }
        grad.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = 4.0 * (exag * p[[i, j]] - num[[i, j]] / z) * num[[i, j]];
                grad[[i, 0]] += w * (y[[i, 0]] - y[[j, 0]]);
                grad[[i, 1]] += w * (y[[i, 1]] - y[[j, 1]]);
            }
        }
        for ((g, u), gain) in grad.iter().zip(update.iter_mut()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*u > 0.0) { *gain + 0.2 } else { *gain * 0.8 };
            *gain = gain.max(0.01);
            *u = momentum * *u - config.learning_rate * *gain * g;
        }
        y += &update;
        let mean = y.mean_axis(Axis(0)).expect("n >= 4");
        y -= &mean;
        let kl = kl_divergence(&p, &y);
        if !kl.is_finite() {
            return Err(Error::Numerical(format!("t-SNE objective became non-finite at iteration {it}")));
        }
        kl_trace.push(kl);
    }
    Ok(TsneResult {
        embedding: y,
        kl_trace,
        perplexity,
        config: TsneConfig {
            perplexity: Some(perplexity),
            ..config.clone()
        },
    })
}

/// Mean silhouette coefficient under Euclidean distance. Points alone in
/// their group score 0. Needs at least two groups.
pub fn silhouette(coords: ArrayView2<f64>, groups: &[usize]) -> Result<f64> {
    let n = coords.nrows();
    if groups.len() != n {
        return Err(Error::shape("silhouette", format!("{n} rows vs {} labels", groups.len())));
    }
    let k = groups.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &g in groups {
        sizes[g] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::Input("silhouette needs at least two non-empty groups".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        if sizes[groups[i]] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i != j {
                let d: f64 = coords.row(i).iter().zip(coords.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                sums[groups[j]] += d.sqrt();
            }
        }
        let a = sums[groups[i]] / (sizes[groups[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&g| g != groups[i] && sizes[g] > 0)
            .map(|g| sums[g] / sizes[g] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests;
