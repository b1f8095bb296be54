//! Exact tSNE over latent vectors, with k-means cluster purity reporting.
//!
//! O(n^2) tSNE (no tree approximation): Gaussian conditional affinities with
//! a per-row bandwidth binary search, symmetrized joint probabilities,
//! Student-t low-dimensional similarities, and momentum gradient descent on
//! the KL divergence with early exaggeration.

mod kmeans;

pub use kmeans::kmeans;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum_start: f64,
    pub momentum_final: f64,
    /// Iteration at which momentum switches from start to final.
    pub momentum_switch_iter: usize,
    /// Factor applied to P during the first `exaggeration_iters` iterations.
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 50.0,
            iterations: 1500,
            learning_rate: 200.0,
            momentum_start: 0.5,
            momentum_final: 0.8,
            momentum_switch_iter: 250,
            exaggeration: 4.0,
            exaggeration_iters: 100,
            seed: 0,
        }
    }
}

impl TsneConfig {
    fn validate(&self, n: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if self.perplexity <= 1.0 || self.perplexity >= n as f64 {
            return Err(Error::Config(format!(
                "perplexity {} must lie in (1, n = {})",
                self.perplexity, n
            )));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Row-major `n x d` matrix of latent vectors.
pub struct LatentMatrix {
    pub data: Vec<f64>,
    pub n: usize,
    pub d: usize,
}

impl LatentMatrix {
    pub fn new(data: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::Shape(format!("{} values for {n}x{d}", data.len())));
        }
        if n < 5 {
            return Err(Error::Data(format!("need at least 5 latent rows, got {n}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite latent value".into()));
        }
        Ok(LatentMatrix { data, n, d })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

fn pairwise_sq_distances(x: &LatentMatrix) -> Result<Vec<f64>> {
    let n = x.n;
    let mut dist = vec![0.0f64; n * n];
    dist.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let xi = x.row(i);
        for (j, slot) in row.iter_mut().enumerate() {
            if i == j {
                continue;
            }
            let xj = x.row(j);
            let mut s = 0.0;
            for (a, b) in xi.iter().zip(xj) {
                let d = a - b;
                s += d * d;
            }
            *slot = s;
        }
    });
    if dist.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite pairwise distance".into()));
    }
    Ok(dist)
}

/// Per-row conditional affinities `p_{j|i}`.
///
/// Each row's Gaussian bandwidth is found by binary search (up to 50 steps)
/// so that the realized perplexity `2^H(P_i)` matches the target within 1e-5.
/// The diagonal is zero and every row sums to 1.
pub fn conditional_affinities(x: &LatentMatrix, perplexity: f64) -> Result<Vec<f64>> {
    if perplexity >= x.n as f64 {
        return Err(Error::Config(format!(
            "perplexity {} must be below n = {}",
            perplexity, x.n
        )));
    }
    let n = x.n;
    let dist = pairwise_sq_distances(x)?;
    let mut p = vec![0.0f64; n * n];
    p.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        affinity_row(&dist[i * n..(i + 1) * n], i, perplexity, row);
    });
    Ok(p)
}

fn affinity_row(dist_row: &[f64], i: usize, perplexity: f64, out: &mut [f64]) {
    let mut beta = 1.0f64;
    let mut beta_min = f64::NEG_INFINITY;
    let mut beta_max = f64::INFINITY;

    // distances shifted by the row minimum for numerical stability
    let base = dist_row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);

    for _ in 0..50 {
        let mut sum = 0.0;
        for (j, &d) in dist_row.iter().enumerate() {
            out[j] = if j == i { 0.0 } else { (-beta * (d - base)).exp() };
            sum += out[j];
        }
        let mut entropy = 0.0;
        if sum > 0.0 {
            for (j, v) in out.iter_mut().enumerate() {
                if j == i {
                    continue;
                }
                *v /= sum;
                if *v > 1e-300 {
                    entropy -= *v * v.ln();
                }
            }
        }
        let realized = entropy.exp(); // 2^(H in bits) == e^(H in nats)
        let diff = realized - perplexity;
        if diff.abs() < 1e-5 {
            return;
        }
        if diff > 0.0 {
            // too many effective neighbors: narrow the kernel
            beta_min = beta;
            beta = if beta_max.is_infinite() { beta * 2.0 } else { 0.5 * (beta + beta_max) };
        } else {
            beta_max = beta;
            beta = if beta_min.is_infinite() { beta * 0.5 } else { 0.5 * (beta + beta_min) };
        }
    }
}

/// Realized perplexity `e^H` of each affinity row (diagnostic used by tests).
pub fn row_perplexities(p: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let mut h = 0.0;
            for j in 0..n {
                let v = p[i * n + j];
                if v > 1e-300 {
                    h -= v * v.ln();
                }
            }
            h.exp()
        })
        .collect()
}

/// KL divergence `sum p ln(p/q)` over off-diagonal entries with 1e-12 clamps.
pub fn kl_divergence(p: &[f64], q: &[f64], n: usize) -> f64 {
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let pv = p[i * n + j];
            if pv > 0.0 {
                kl += pv * (pv / q[i * n + j].max(1e-12)).ln();
            }
        }
    }
    kl
}

pub struct TsneResult {
    /// `n x 2` embedding, mean-centered.
    pub embedding: Vec<[f64; 2]>,
    /// KL(P||Q) of the random initialization.
    pub initial_kl: f64,
    pub final_kl: f64,
}

/// Run exact tSNE on latent vectors.
pub fn tsne(x: &LatentMatrix, cfg: &TsneConfig) -> Result<TsneResult> {
    cfg.validate(x.n)?;
    let n = x.n;
    let cond = conditional_affinities(x, cfg.perplexity)?;

    // symmetrize: p_ij = (p_{j|i} + p_{i|j}) / (2n)
    let mut p = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut y: Vec<f64> = (0..n * 2)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * 1e-4
        })
        .collect();
    let mut velocity = vec![0.0f64; n * 2];

    let q_of = |y: &[f64]| -> (Vec<f64>, Vec<f64>) {
        // Student-t numerators and normalized q
        let mut num = vec![0.0f64; n * n];
        let row_sums: Vec<f64> = num
            .par_chunks_mut(n)
            .enumerate()
            .map(|(i, row)| {
                let (yi0, yi1) = (y[2 * i], y[2 * i + 1]);
                let mut sum = 0.0;
                for (j, slot) in row.iter_mut().enumerate() {
                    if i == j {
                        continue;
                    }
                    let d0 = yi0 - y[2 * j];
                    let d1 = yi1 - y[2 * j + 1];
                    *slot = 1.0 / (1.0 + d0 * d0 + d1 * d1);
                    sum += *slot;
                }
                sum
            })
            .collect();
        let z: f64 = row_sums.iter().sum();
        let q: Vec<f64> = num.iter().map(|&t| (t / z).max(1e-12)).collect();
        (num, q)
    };

    let (_, q0) = q_of(&y);
    let initial_kl = kl_divergence(&p, &q0, n);

    for iter in 0..cfg.iterations {
        let exaggerate = iter < cfg.exaggeration_iters;
        let momentum = if iter < cfg.momentum_switch_iter {
            cfg.momentum_start
        } else {
            cfg.momentum_final
        };
        let (num, q) = q_of(&y);

        let grads: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (yi0, yi1) = (y[2 * i], y[2 * i + 1]);
                let mut g = [0.0f64; 2];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let pij = if exaggerate {
                        p[i * n + j] * cfg.exaggeration
                    } else {
                        p[i * n + j]
                    };
                    let coeff = 4.0 * (pij - q[i * n + j]) * num[i * n + j];
                    g[0] += coeff * (yi0 - y[2 * j]);
                    g[1] += coeff * (yi1 - y[2 * j + 1]);
                }
                g
            })
            .collect();

        for i in 0..n {
            for c in 0..2 {
                velocity[2 * i + c] =
                    momentum * velocity[2 * i + c] - cfg.learning_rate * grads[i][c];
                y[2 * i + c] += velocity[2 * i + c];
            }
        }
        // recenter
        let mean0 = y.iter().step_by(2).sum::<f64>() / n as f64;
        let mean1 = y.iter().skip(1).step_by(2).sum::<f64>() / n as f64;
        for i in 0..n {
            y[2 * i] -= mean0;
            y[2 * i + 1] -= mean1;
        }
    }

    let (_, qf) = q_of(&y);
    let final_kl = kl_divergence(&p, &qf, n);
    let embedding = (0..n).map(|i| [y[2 * i], y[2 * i + 1]]).collect();
    Ok(TsneResult { embedding, initial_kl, final_kl })
}

/// Per-label purity of a k-means clustering of the embedding.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterReport {
    /// Fraction of points whose cluster-majority label matches their own.
    pub overall_purity: f64,
    pub per_label: Vec<LabelPurity>,
    pub num_clusters: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabelPurity {
    pub label: String,
    pub count: usize,
    pub purity: f64,
    /// Whether this label is the majority in at least one cluster.
    pub majority_in_some_cluster: bool,
}

/// Cluster the embedding with k-means (k = number of distinct labels, seeded,
/// 20 restarts) and report purity per synthesizer.
pub fn cluster_report(y: &[[f64; 2]], labels: &[String], seed: u64) -> Result<ClusterReport> {
    if y.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} points vs {} labels",
            y.len(),
            labels.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Data("empty embedding".into()));
    }
    let mut distinct: Vec<String> = Vec::new();
    for l in labels {
        if !distinct.contains(l) {
            distinct.push(l.clone());
        }
    }
    let k = distinct.len();
    let assignment = kmeans(y, k, seed, 20)?;

    // majority label per cluster
    let mut cluster_counts = vec![vec![0usize; distinct.len()]; k];
    for (a, l) in assignment.iter().zip(labels) {
        let li = distinct.iter().position(|d| d == l).unwrap();
        cluster_counts[*a][li] += 1;
    }
    let majority: Vec<Option<usize>> = cluster_counts
        .iter()
        .map(|counts| {
            let best = counts.iter().enumerate().max_by_key(|&(_, c)| *c)?;
            if *best.1 == 0 {
                None
            } else {
                Some(best.0)
            }
        })
        .collect();

    let mut matches = 0usize;
    let mut per_label_match = vec![0usize; distinct.len()];
    let mut per_label_count = vec![0usize; distinct.len()];
    for (a, l) in assignment.iter().zip(labels) {
        let li = distinct.iter().position(|d| d == l).unwrap();
        per_label_count[li] += 1;
        if majority[*a] == Some(li) {
            matches += 1;
            per_label_match[li] += 1;
        }
    }
    let per_label = distinct
        .iter()
        .enumerate()
        .map(|(li, label)| LabelPurity {
            label: label.clone(),
            count: per_label_count[li],
            purity: per_label_match[li] as f64 / per_label_count[li].max(1) as f64,
            majority_in_some_cluster: majority.iter().any(|&m| m == Some(li)),
        })
        .collect();

    Ok(ClusterReport {
        overall_purity: matches as f64 / labels.len() as f64,
        per_label,
        num_clusters: k,
    })
}

/// Seeded stratified subsample: at most `max_points` indices, allocated to
/// labels proportionally to their counts (at least one each where possible).
pub fn subsample_stratified(labels: &[String], max_points: usize, seed: u64) -> Vec<usize> {
    if labels.len() <= max_points {
        return (0..labels.len()).collect();
    }
    let mut distinct: Vec<String> = Vec::new();
    for l in labels {
        if !distinct.contains(l) {
            distinct.push(l.clone());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = labels.len();
    let mut picked = Vec::with_capacity(max_points);
    let mut budget = max_points;
    for (rank, d) in distinct.iter().enumerate() {
        let mut idxs: Vec<usize> =
            (0..n).filter(|&i| &labels[i] == d).collect();
        let remaining_labels = distinct.len() - rank;
        let quota = ((idxs.len() * max_points) / n)
            .max(1)
            .min(budget.saturating_sub(remaining_labels - 1));
        idxs.shuffle(&mut rng);
        picked.extend_from_slice(&idxs[..quota.min(idxs.len())]);
        budget -= quota.min(idxs.len());
    }
    picked.sort_unstable();
    picked
}
