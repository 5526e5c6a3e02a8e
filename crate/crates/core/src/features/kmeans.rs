//! Lloyd's k-means with seeded initialization.
//!
//! Ties in assignment go to the lowest centroid index. A cluster that ends an
//! iteration empty is re-seeded at the point farthest from its assigned
//! centroid (lowest point index on ties, each point used at most once).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};
use crate::rng::{fnv1a64, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub centroids: Matrix,
    /// Sum of squared distances to the assigned centroids at exit.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every assignment step, initial assignment first.
    pub inertia_trace: Vec<f64>,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    /// Nearest centroid and its squared distance.
    pub fn assign(&self, point: &[f64]) -> (usize, f64) {
        nearest(&self.centroids, point)
    }

    /// Stable content hash used to key token caches.
    pub fn model_hash(&self) -> String {
        let mut bytes = Vec::with_capacity(self.centroids.as_slice().len() * 8 + 16);
        bytes.extend_from_slice(&(self.k() as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        for v in self.centroids.as_slice() {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        format!("{:016x}", fnv1a64(&bytes))
    }
}

fn nearest(centroids: &Matrix, point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.row_iter().enumerate() {
        let d = squared_distance(c, point);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign_all(centroids: &Matrix, points: &Matrix) -> (Vec<usize>, Vec<f64>) {
    points.row_iter().map(|p| nearest(centroids, p)).unzip()
}

pub fn kmeans_fit(points: &Matrix, config: KMeansConfig) -> Result<KMeansModel> {
    let (n, d) = points.shape();
    let k = config.k;
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    if n < k {
        return Err(Error::param(format!("{n} points cannot form {k} clusters")));
    }
    if !points.is_finite() {
        return Err(Error::input("k-means input contains non-finite values"));
    }

    let mut rng = SplitMix64::derive(config.seed, "kmeans-init");
    let init = rng.sample_indices(n, k);
    let mut centroids = Matrix::from_fn(k, d, |j, c| points.get(init[j], c));

    let (mut labels, mut dists) = assign_all(&centroids, points);
    let mut trace = vec![dists.iter().sum::<f64>()];
    let mut iterations = 0;
    while iterations < config.max_iters {
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &j) in labels.iter().enumerate() {
            counts[j] += 1;
            for (s, v) in sums.row_mut(j).iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        let mut reseeded = vec![false; n];
        let mut shift = 0.0f64;
        for j in 0..k {
            let next: Vec<f64> = if counts[j] > 0 {
                let c = counts[j] as f64;
                sums.row(j).iter().map(|s| s / c).collect()
            } else {
                let mut far = None::<(usize, f64)>;
                for (i, &di) in dists.iter().enumerate() {
                    if !reseeded[i] && far.is_none_or(|(_, best)| di > best) {
                        far = Some((i, di));
                    }
                }
                let (p, _) = far.expect("n >= k leaves a point to reseed with");
                reseeded[p] = true;
                dists[p] = 0.0;
                points.row(p).to_vec()
            };
            shift = shift.max(squared_distance(centroids.row(j), &next).sqrt());
            centroids.row_mut(j).copy_from_slice(&next);
        }
        iterations += 1;
        (labels, dists) = assign_all(&centroids, points);
        trace.push(dists.iter().sum());
        if shift < config.tol {
            break;
        }
    }

    Ok(KMeansModel {
        centroids,
        inertia: *trace.last().expect("trace is never empty"),
        iterations,
        inertia_trace: trace,
    })
}

/// Stacks per-clip frame matrices into one pool, in order.
pub fn stack_rows<'a>(mats: impl IntoIterator<Item = &'a Matrix>) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for m in mats {
        if m.rows() == 0 {
            continue;
        }
        match cols {
            None => cols = Some(m.cols()),
            Some(c) if c != m.cols() => {
                return Err(Error::param(format!(
                    "cannot stack {}-column rows onto {c}-column rows",
                    m.cols()
                )))
            }
            _ => {}
        }
        rows += m.rows();
        data.extend_from_slice(m.as_slice());
    }
    Matrix::from_vec(rows, cols.unwrap_or(0), data)
}

/// Seeded uniform sample without replacement of `ceil(fraction · n)` rows.
pub fn sample_fraction(pool: &Matrix, fraction: f64, seed: u64) -> Result<Matrix> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::param(format!("fraction {fraction} must be in (0, 1]")));
    }
    let n = pool.rows();
    let take = ((fraction * n as f64 - 1e-9).ceil() as usize).min(n);
    let mut rng = SplitMix64::derive(seed, "frame-sample");
    let idx = rng.sample_indices(n, take);
    Ok(Matrix::from_fn(take, pool.cols(), |i, j| pool.get(idx[i], j)))
}
