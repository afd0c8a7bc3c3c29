//! Lloyd's k-means with k-means++ seeding, used by the Cluster-MIR baseline.

use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::nn::Rng;
use crate::scalar::Scalar;

pub const MAX_ITERS: usize = 100;
pub const TOLERANCE: f64 = 1e-6;

fn sq_dist<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut s = F::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        s = s + d * d;
    }
    s
}

pub fn nearest_centroid<F: Scalar>(x: &[F], centroids: &[Vec<F>]) -> usize {
    let mut best = 0;
    let mut best_d = sq_dist(x, &centroids[0]);
    for (i, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(x, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// k-means++ initialization.
fn seed_centroids<F: Scalar>(points: &[Vec<F>], k: usize, rng: &mut Rng) -> Vec<Vec<F>> {
    let first = rand::Rng::random_range(rng, 0..points.len());
    let mut centroids = vec![points[first].clone()];
    let mut dists: Vec<F> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: F = dists.iter().fold(F::zero(), |a, d| a + *d);
        let idx = if total > F::zero() {
            let mut target = F::sample_uniform(rng, F::zero(), F::one()) * total;
            let mut chosen = points.len() - 1;
            for (i, d) in dists.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target = target - *d;
            }
            chosen
        } else {
            // All remaining distances are zero (duplicate points).
            rand::Rng::random_range(rng, 0..points.len())
        };
        centroids.push(points[idx].clone());
        for (d, p) in dists.iter_mut().zip(points) {
            let nd = sq_dist(p, centroids.last().unwrap());
            if nd < *d {
                *d = nd;
            }
        }
    }
    centroids
}

/// Returns `(centroids, assignment)` for `k` clusters over `points`.
pub fn kmeans<F: Scalar>(points: &[Vec<F>], k: usize, seed: u64) -> Result<(Vec<Vec<F>>, Vec<usize>)> {
    if k == 0 {
        return Err(Error::Config("n_clusters must be >= 1".into()));
    }
    if k > points.len() {
        return Err(Error::Config(format!(
            "n_clusters {k} exceeds the {} available instances",
            points.len()
        )));
    }
    let dim = points[0].len();
    let mut rng = Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assignment = vec![0usize; points.len()];
    let tol = F::c(TOLERANCE);

    for _ in 0..MAX_ITERS {
        for (a, p) in assignment.iter_mut().zip(points) {
            *a = nearest_centroid(p, &centroids);
        }
        let mut sums = vec![vec![F::zero(); dim]; k];
        let mut counts = vec![0usize; k];
        for (a, p) in assignment.iter().zip(points) {
            counts[*a] += 1;
            for (s, v) in sums[*a].iter_mut().zip(p) {
                *s = *s + *v;
            }
        }
        let mut shift = F::zero();
        for (c, (sum, count)) in centroids.iter_mut().zip(sums.iter().zip(&counts)) {
            if *count == 0 {
                continue; // empty cluster keeps its centroid
            }
            let inv = F::one() / F::from_count(*count);
            let new: Vec<F> = sum.iter().map(|s| *s * inv).collect();
            let d = sq_dist(c, &new).sqrt();
            if d > shift {
                shift = d;
            }
            *c = new;
        }
        if shift <= tol {
            break;
        }
    }
    for (a, p) in assignment.iter_mut().zip(points) {
        *a = nearest_centroid(p, &centroids);
    }
    Ok((centroids, assignment))
}
