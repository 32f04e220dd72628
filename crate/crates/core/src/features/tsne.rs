use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimisation schedule for exact t-SNE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub init_std: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            init_std: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    pub points: Vec<[f64; 2]>,
    /// KL(P‖Q) after every iteration, always against the unexaggerated P.
    pub kl_trace: Vec<f64>,
    pub exaggeration_iterations: usize,
}

impl Embedding2D {
    /// KL value at the last exaggerated iteration.
    pub fn kl_after_exaggeration(&self) -> Option<f64> {
        self.exaggeration_iterations
            .checked_sub(1)
            .and_then(|i| self.kl_trace.get(i))
            .copied()
    }
}

/// Symmetric joint probabilities, row-major `n × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinities {
    pub n: usize,
    pub p: Vec<f64>,
}

const PERPLEXITY_TOL: f64 = 1e-5;
const MIN_PROB: f64 = 1e-12;

fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect()
        })
        .collect();
    rows.concat()
}

/// Conditional distribution of row `i` whose perplexity is closest to the target.
fn conditional_row(d: &[f64], i: usize, perplexity: f64) -> Vec<f64> {
    let n = d.len();
    let dmin = d
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let row = |beta: f64| -> (Vec<f64>, f64) {
        let mut p: Vec<f64> = (0..n)
            .map(|j| if j == i { 0.0 } else { (-(d[j] - dmin) * beta).exp() })
            .collect();
        let sum: f64 = p.iter().sum();
        let weighted: f64 = p.iter().zip(d).map(|(pj, dj)| pj * (dj - dmin)).sum();
        let h = sum.ln() + beta * weighted / sum;
        for v in &mut p {
            *v /= sum;
        }
        (p, h.exp())
    };
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    let mut best = row(beta);
    for _ in 0..200 {
        let (p, perp) = row(beta);
        let err = perp - perplexity;
        if (perp - perplexity).abs() < (best.1 - perplexity).abs() {
            best = (p, perp);
        }
        if err.abs() < PERPLEXITY_TOL {
            break;
        }
        if err > 0.0 {
            // Too flat: sharpen.
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    best.0
}

/// Perplexity-calibrated, symmetrised input affinities.
pub fn affinities(x: &[Vec<f64>], perplexity: f64) -> Result<Affinities> {
    let n = x.len();
    if n < 4 {
        return Err(Error::InvalidInput(format!("t-SNE needs at least 4 points, got {n}")));
    }
    if !(perplexity > 0.0) || perplexity >= n as f64 {
        return Err(Error::InvalidInput(format!(
            "perplexity {perplexity} must be positive and below the point count {n}"
        )));
    }
    let dim = x[0].len();
    if x.iter().any(|r| r.len() != dim) {
        return Err(Error::Dimension("points have differing lengths".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-SNE input"));
    }
    let d = squared_distances(x);
    if d.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput(
            "all points are identical; pairwise similarities are undefined".into(),
        ));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| conditional_row(&d[i * n..(i + 1) * n], i, perplexity))
        .collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((rows[i][j] + rows[j][i]) / (2.0 * n as f64)).max(MIN_PROB);
            }
        }
    }
    // The floor adds mass; the gradient below assumes P sums to one.
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    Ok(Affinities { n, p })
}

/// KL(P‖Q) for the embedding `y` and its exact gradient, with `P` scaled by
/// `exaggeration` in the gradient only.
pub fn kl_and_gradient(aff: &Affinities, y: &[[f64; 2]], exaggeration: f64) -> (f64, Vec<[f64; 2]>) {
    let n = aff.n;
    let mut num = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                total += v;
            }
        }
    }
    let mut kl = 0.0;
    let mut grad = vec![[0.0; 2]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let p = aff.p[i * n + j];
            let q = (num[i * n + j] / total).max(MIN_PROB);
            kl += p * (p / q).ln();
            let m = 4.0 * (exaggeration * p - q) * num[i * n + j];
            grad[i][0] += m * (y[i][0] - y[j][0]);
            grad[i][1] += m * (y[i][1] - y[j][1]);
        }
    }
    (kl, grad)
}

/// Initial embedding drawn from `N(0, init_std²)`.
pub fn initial_embedding(n: usize, init_std: f64, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, init_std).expect("positive std");
    (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect()
}

pub fn tsne(codes: &[Vec<f64>], perplexity: f64, seed: u64) -> Result<Embedding2D> {
    tsne_with(
        codes,
        &TsneConfig {
            perplexity,
            ..TsneConfig::default()
        },
        seed,
    )
}

pub fn tsne_with(codes: &[Vec<f64>], cfg: &TsneConfig, seed: u64) -> Result<Embedding2D> {
    let aff = affinities(codes, cfg.perplexity)?;
    let n = aff.n;
    let mut y = initial_embedding(n, cfg.init_std, seed);
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0; 2]; n];
    let mut kl_trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let exaggerated = it < cfg.exaggeration_iterations;
        let ex = if exaggerated { cfg.exaggeration } else { 1.0 };
        let momentum = if exaggerated {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        };
        let (_, grad) = kl_and_gradient(&aff, &y, ex);
        for i in 0..n {
            for c in 0..2 {
                let g = grad[i][c];
                gains[i][c] = if (g > 0.0) != (velocity[i][c] > 0.0) {
                    gains[i][c] + 0.2
                } else {
                    (gains[i][c] * 0.8f64).max(0.01)
                };
                velocity[i][c] = momentum * velocity[i][c] - cfg.learning_rate * gains[i][c] * g;
                y[i][c] += velocity[i][c];
            }
        }
        for c in 0..2 {
            let mean = y.iter().map(|p| p[c]).sum::<f64>() / n as f64;
            for p in &mut y {
                p[c] -= mean;
            }
        }
        let (kl, _) = kl_and_gradient(&aff, &y, 1.0);
        if !kl.is_finite() {
            return Err(Error::NonFinite("t-SNE KL divergence"));
        }
        kl_trace.push(kl);
    }
    Ok(Embedding2D {
        points: y,
        kl_trace,
        exaggeration_iterations: cfg.exaggeration_iterations.min(cfg.iterations),
    })
}
