//! k-means with k-means++ seeding and Lloyd refinement.
//!
//! Used in three places: landmark selection for the anchor graph (one run with
//! `k = p`), the final clustering of the spectral embedding, and the plain
//! k-means baseline.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{sq_dist, DenseMatrix};
use crate::rng::SeededRng;

/// Cluster labels plus the objective value they reach.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub labels: Vec<usize>,
    pub k: usize,
    pub inertia: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansConfig {
    pub k: usize,
    pub n_init: usize,
    pub max_iter: usize,
    /// Convergence threshold on the largest centroid displacement.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 2,
            n_init: 10,
            max_iter: 300,
            tol: 1e-4,
            seed: 0,
        }
    }
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k-means needs k >= 1"));
        }
        if self.n_init == 0 {
            return Err(Error::invalid("k-means needs n_init >= 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("k-means tolerance must be >= 0"));
        }
        Ok(())
    }
}

/// Outcome of a single Lloyd run.
#[derive(Debug, Clone)]
pub struct LloydResult {
    pub partition: Partition,
    pub centroids: DenseMatrix,
    pub iterations: usize,
    /// Inertia after each assignment step, final assignment included.
    pub inertia_history: Vec<f64>,
    /// Number of empty clusters that had to be re-seeded.
    pub repairs: usize,
}

/// k-means++ seeding: the first centroid is a uniform draw, every following one
/// is drawn with probability proportional to the squared distance to the
/// nearest centroid chosen so far.
pub fn kmeanspp_seed<R: Rng + ?Sized>(x: &DenseMatrix, k: usize, rng: &mut R) -> Result<DenseMatrix> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k-means++ needs 1 <= k <= n, got k={k}, n={n}")));
    }
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut nearest: Vec<f64> = x.row_iter().map(|r| sq_dist(r, x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `acc` a hair below `target`
            pick.unwrap_or_else(|| nearest.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            // every point coincides with a chosen centroid
            rng.random_range(0..n)
        };
        chosen.push(next);
        let c = x.row(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), c));
        }
    }
    Ok(x.select_rows(&chosen))
}

/// Nearest centroid for every point, ties resolved to the lowest index.
fn assign(x: &DenseMatrix, centroids: &DenseMatrix) -> (Vec<usize>, Vec<f64>) {
    let mut labels = Vec::with_capacity(x.rows());
    let mut dists = Vec::with_capacity(x.rows());
    for r in x.row_iter() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, cr) in centroids.row_iter().enumerate() {
            let d = sq_dist(r, cr);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        labels.push(best);
        dists.push(best_d);
    }
    (labels, dists)
}

/// Assignment step followed by empty-cluster repair. An empty centroid is moved
/// onto the point farthest from its current centroid, taken from a cluster with
/// at least two members.
fn assign_and_repair(x: &DenseMatrix, centroids: &mut DenseMatrix) -> (Vec<usize>, Vec<f64>, usize) {
    let k = centroids.rows();
    let (mut labels, mut dists) = assign(x, centroids);
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    let mut repairs = 0;
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let donor = (0..x.rows())
            .filter(|&i| counts[labels[i]] > 1)
            .fold(None::<usize>, |best, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            });
        let Some(p) = donor else { break };
        counts[labels[p]] -= 1;
        counts[c] = 1;
        labels[p] = c;
        dists[p] = 0.0;
        centroids.row_mut(c).copy_from_slice(x.row(p));
        repairs += 1;
    }
    (labels, dists, repairs)
}

fn update_means(x: &DenseMatrix, labels: &[usize], previous: &DenseMatrix) -> DenseMatrix {
    let k = previous.rows();
    let mut sums = DenseMatrix::zeros(k, x.cols());
    let mut counts = vec![0usize; k];
    for (r, &l) in x.row_iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums.row_mut(l).iter_mut().zip(r) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            sums.row_mut(c).copy_from_slice(previous.row(c));
        } else {
            let inv = counts[c] as f64;
            sums.row_mut(c).iter_mut().for_each(|v| *v /= inv);
        }
    }
    sums
}

/// Lloyd iterations from the given centroids until the largest centroid move
/// drops below `cfg.tol` or `cfg.max_iter` rounds have run.
pub fn lloyd(x: &DenseMatrix, init_centroids: &DenseMatrix, cfg: &KMeansConfig) -> Result<LloydResult> {
    if init_centroids.cols() != x.cols() {
        return Err(Error::dim("lloyd", x.cols(), init_centroids.cols()));
    }
    if init_centroids.rows() == 0 || x.rows() == 0 {
        return Err(Error::invalid("lloyd needs at least one point and one centroid"));
    }
    let mut centroids = init_centroids.clone();
    let mut history = Vec::new();
    let mut repairs = 0;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let (labels, dists, fixed) = assign_and_repair(x, &mut centroids);
        repairs += fixed;
        history.push(dists.iter().sum());
        let next = update_means(x, &labels, &centroids);
        let shift = centroids
            .row_iter()
            .zip(next.row_iter())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0f64, f64::max);
        centroids = next;
        if shift < cfg.tol {
            break;
        }
    }
    let (labels, dists, fixed) = assign_and_repair(x, &mut centroids);
    repairs += fixed;
    let inertia: f64 = dists.iter().sum();
    history.push(inertia);
    Ok(LloydResult {
        partition: Partition {
            labels,
            k: centroids.rows(),
            inertia,
        },
        centroids,
        iterations,
        inertia_history: history,
        repairs,
    })
}

/// Seeded k-means++ then Lloyd, once.
pub fn kmeans_single(x: &DenseMatrix, cfg: &KMeansConfig, rng: SeededRng) -> Result<LloydResult> {
    cfg.validate()?;
    let init = kmeanspp_seed(x, cfg.k, &mut rng.rng())?;
    lloyd(x, &init, cfg)
}

/// Best of `cfg.n_init` seeded restarts by inertia; restart `i` uses stream
/// `i` derived from `cfg.seed`, and ties go to the lower restart index.
pub fn kmeans_full(x: &DenseMatrix, cfg: &KMeansConfig) -> Result<LloydResult> {
    cfg.validate()?;
    if cfg.k > x.rows() {
        return Err(Error::invalid(format!("k={} exceeds the {} points", cfg.k, x.rows())));
    }
    let base = SeededRng::new(cfg.seed);
    let runs: Vec<Result<LloydResult>> = (0..cfg.n_init)
        .into_par_iter()
        .map(|i| kmeans_single(x, cfg, base.derive(i as u64)))
        .collect();
    let mut best: Option<LloydResult> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.partition.inertia < b.partition.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

pub fn kmeans(x: &DenseMatrix, cfg: &KMeansConfig) -> Result<Partition> {
    kmeans_full(x, cfg).map(|r| r.partition)
}
