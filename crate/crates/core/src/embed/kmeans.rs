//! Seeded k-means with k-means++ initialization and restarts.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Cluster 2-D points into `k` groups; the best of `restarts` seeded runs
/// (lowest inertia) wins. Returns per-point cluster assignments.
pub fn kmeans(points: &[[f64; 2]], k: usize, seed: u64, restarts: usize) -> Result<Vec<usize>> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} for {} points",
            points.len()
        )));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
        let (assignment, inertia) = lloyd(points, k, &mut rng);
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assignment));
        }
    }
    Ok(best.expect("at least one restart").1)
}

fn lloyd(points: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let mut centers = plus_plus_init(points, k, rng);
    let mut assignment = vec![0usize; points.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let nearest = nearest_center(p, &centers);
            if assignment[i] != nearest {
                assignment[i] = nearest;
                changed = true;
            }
        }
        // recompute centers; empty clusters keep their previous position
        let mut sums = vec![[0.0f64; 2]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            sums[assignment[i]][0] += p[0];
            sums[assignment[i]][1] += p[1];
            counts[assignment[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .enumerate()
        .map(|(i, p)| sq_dist(p, &centers[assignment[i]]))
        .sum();
    (assignment, inertia)
}

fn plus_plus_init(points: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        };
        centers.push(points[next]);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centers.last().unwrap()));
        }
    }
    centers
}

fn nearest_center(p: &[f64; 2], centers: &[[f64; 2]]) -> usize {
    let mut best = 0;
    let mut best_d = sq_dist(p, &centers[0]);
    for (c, center) in centers.iter().enumerate().skip(1) {
        let d = sq_dist(p, center);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

#[inline]
fn sq_dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    d0 * d0 + d1 * d1
}
