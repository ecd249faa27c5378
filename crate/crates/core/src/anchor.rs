//! Sparse point-to-landmark affinities.
//!
//! Landmarks are k-means centroids of an encoding. Each point keeps Gaussian
//! kernel weights to its `r` nearest landmarks, normalized to sum to one, which
//! gives a row-stochastic `n × p` matrix `Z`. Scaling the columns of `Z` by the
//! inverse square roots of their sums yields `Ẑ`, and `ẐẐᵀ` is then a
//! symmetric bi-stochastic `n × n` similarity that is never formed explicitly.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::{kmeans_single, KMeansConfig};
use crate::matrix::{sq_dist, DenseMatrix, SparseRowMatrix};
use crate::rng::SeededRng;

/// How the kernel bandwidth of each row is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// σ_i is the mean distance from point i to its r nearest landmarks.
    PerPointMean,
    /// One σ shared by every row.
    GlobalFixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorConfig {
    /// Number of landmarks.
    pub p: usize,
    /// Nearest landmarks kept per point.
    pub r: usize,
    pub bandwidth: Bandwidth,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            p: 100,
            r: 5,
            bandwidth: Bandwidth::PerPointMean,
        }
    }
}

impl AnchorConfig {
    pub fn new(p: usize, r: usize) -> Self {
        Self {
            p,
            r,
            bandwidth: Bandwidth::PerPointMean,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.r == 0 || self.r > self.p || self.p > n {
            return Err(Error::invalid(format!(
                "anchor graph needs 1 <= r <= p <= n, got r={}, p={}, n={n}",
                self.r, self.p
            )));
        }
        if let Bandwidth::GlobalFixed(s) = self.bandwidth {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::invalid(format!("fixed bandwidth must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub u: DenseMatrix,
}

impl LandmarkSet {
    pub fn len(&self) -> usize {
        self.u.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.u.rows() == 0
    }
}

/// One encoding's normalized affinity together with what produced it.
#[derive(Debug, Clone)]
pub struct SparseAffinity {
    pub z_hat: SparseRowMatrix,
    pub landmarks: LandmarkSet,
    /// Bandwidth used for each row (0 when the row fell back to uniform weights).
    pub sigma_used: Vec<f64>,
}

/// Landmarks are the centroids of one k-means++/Lloyd run with `k = p`.
pub fn select_landmarks(y: &DenseMatrix, p: usize, rng: SeededRng) -> Result<LandmarkSet> {
    if p == 0 || p > y.rows() {
        return Err(Error::invalid(format!("need 1 <= p <= n landmarks, got p={p}, n={}", y.rows())));
    }
    let cfg = KMeansConfig {
        n_init: 1,
        ..KMeansConfig::new(p)
    };
    let run = kmeans_single(y, &cfg, rng)?;
    Ok(LandmarkSet { u: run.centroids })
}

/// Row-stochastic kernel affinity restricted to each point's `r` nearest
/// landmarks (ties broken toward the lower landmark index). Returns `Z` and
/// the bandwidth used per row.
pub fn build_z(y: &DenseMatrix, landmarks: &LandmarkSet, cfg: &AnchorConfig) -> Result<(SparseRowMatrix, Vec<f64>)> {
    cfg.validate(y.rows())?;
    let u = &landmarks.u;
    if u.rows() != cfg.p {
        return Err(Error::dim("build_z", format!("{} landmarks", cfg.p), u.rows()));
    }
    if u.cols() != y.cols() {
        return Err(Error::dim("build_z", y.cols(), u.cols()));
    }
    let r = cfg.r;
    let mut rows = Vec::with_capacity(y.rows());
    let mut sigmas = Vec::with_capacity(y.rows());
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(cfg.p);
    for yi in y.row_iter() {
        dists.clear();
        dists.extend(u.row_iter().enumerate().map(|(j, uj)| (sq_dist(yi, uj), j)));
        let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if r < dists.len() {
            dists.select_nth_unstable_by(r - 1, by_distance);
        }
        let nearest = &mut dists[..r];
        nearest.sort_by(by_distance);

        let sigma = match cfg.bandwidth {
            Bandwidth::PerPointMean => nearest.iter().map(|(d, _)| d.sqrt()).sum::<f64>() / r as f64,
            Bandwidth::GlobalFixed(s) => s,
        };
        let weights: Vec<f64> = if sigma > 0.0 {
            // A per-point bandwidth keeps every exponent above -r²/2. A fixed one
            // can underflow, so its exponents are shifted by the nearest distance.
            let d0 = match cfg.bandwidth {
                Bandwidth::PerPointMean => 0.0,
                Bandwidth::GlobalFixed(_) => nearest[0].0,
            };
            let two_s2 = 2.0 * sigma * sigma;
            nearest
                .iter()
                .map(|(d, _)| (-(d - d0) / two_s2).exp().max(f64::MIN_POSITIVE))
                .collect()
        } else {
            vec![1.0; r]
        };
        let total: f64 = weights.iter().sum();
        rows.push(nearest.iter().zip(&weights).map(|(&(_, j), w)| (j, w / total)).collect());
        sigmas.push(sigma);
    }
    Ok((SparseRowMatrix::from_rows(cfg.p, rows)?, sigmas))
}

/// `Ẑ = Z·Σ^{-1/2}` with `Σ = diag(Zᵀ1)`; zero-sum columns stay zero.
pub fn normalize_z(z: &SparseRowMatrix) -> Result<SparseRowMatrix> {
    if let Some(pos) = z.values().iter().position(|&v| v < 0.0) {
        return Err(Error::invalid(format!("negative affinity at stored entry {pos}")));
    }
    let factors: Vec<f64> = z
        .column_sums()
        .into_iter()
        .map(|s| if s > 0.0 { 1.0 / s.sqrt() } else { 0.0 })
        .collect();
    z.scale_columns(&factors)
}

/// Landmark selection, `Z` and `Ẑ` for one encoding.
pub fn build_affinity(y: &DenseMatrix, cfg: &AnchorConfig, rng: SeededRng) -> Result<SparseAffinity> {
    cfg.validate(y.rows())?;
    let landmarks = select_landmarks(y, cfg.p, rng)?;
    let (z, sigma_used) = build_z(y, &landmarks, cfg)?;
    Ok(SparseAffinity {
        z_hat: normalize_z(&z)?,
        landmarks,
        sigma_used,
    })
}

/// Debug dump: one `row col value` line per stored entry, row-major order.
pub fn write_triplets<W: Write>(mut w: W, z: &SparseRowMatrix) -> Result<()> {
    for i in 0..z.rows() {
        let (idx, vals) = z.row(i);
        for (j, v) in idx.iter().zip(vals) {
            writeln!(w, "{i} {j} {v:e}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_points(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = SeededRng::new(seed).rng();
        DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn single_landmark_is_all_ones() {
        let y = random_points(7, 2, 1);
        let lm = LandmarkSet { u: y.select_rows(&[3]) };
        let (z, _) = build_z(&y, &lm, &AnchorConfig::new(1, 1)).unwrap();
        assert_eq!(z.to_dense(), DenseMatrix::from_fn(7, 1, |_, _| 1.0));
    }

    #[test]
    fn rows_are_stochastic_with_r_entries() {
        let y = random_points(50, 3, 2);
        let lm = select_landmarks(&y, 10, SeededRng::new(3)).unwrap();
        let cfg = AnchorConfig::new(10, 4);
        let (z, _) = build_z(&y, &lm, &cfg).unwrap();
        assert_eq!(z.nnz(), 50 * 4);
        for s in z.row_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        // weights fall off with distance
        for i in 0..50 {
            let (idx, vals) = z.row(i);
            let mut pairs: Vec<(f64, f64)> =
                idx.iter().zip(vals).map(|(&j, &v)| (sq_dist(y.row(i), lm.u.row(j)), v)).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            assert!(pairs.windows(2).all(|w| w[1].1 <= w[0].1));
        }
    }

    #[test]
    fn matches_dense_brute_force() {
        // 5 points, 3 landmarks, r = 2: compute every kernel value, zero all but
        // the two nearest landmarks, renormalize.
        let y = DenseMatrix::from_rows(&[[0.0, 0.0], [1.0, 0.2], [0.3, 0.9], [2.0, 2.0], [-1.0, 0.5]]).unwrap();
        let u = DenseMatrix::from_rows(&[[0.0, 0.1], [1.5, 1.0], [-0.5, 1.0]]).unwrap();
        let cfg = AnchorConfig::new(3, 2);
        let (z, sig) = build_z(&y, &LandmarkSet { u: u.clone() }, &cfg).unwrap();
        for i in 0..5 {
            let d: Vec<f64> = (0..3)
                .map(|j| (y[(i, 0)] - u[(j, 0)]).powi(2) + (y[(i, 1)] - u[(j, 1)]).powi(2))
                .collect();
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap());
            let sigma = (d[order[0]].sqrt() + d[order[1]].sqrt()) / 2.0;
            assert!((sig[i] - sigma).abs() < 1e-15);
            let k: Vec<f64> = (0..3).map(|j| (-d[j] / (2.0 * sigma * sigma)).exp()).collect();
            let denom = k[order[0]] + k[order[1]];
            for j in 0..3 {
                let expect = if j == order[2] { 0.0 } else { k[j] / denom };
                assert!((z.get(i, j) - expect).abs() < 1e-15, "row {i} col {j}");
            }
        }
    }

    #[test]
    fn coincident_landmarks_fall_back_to_uniform() {
        let y = DenseMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let lm = LandmarkSet { u: y.clone() };
        let (z, sig) = build_z(&y, &lm, &AnchorConfig::new(2, 2)).unwrap();
        assert_eq!(sig, vec![0.0, 0.0]);
        assert_eq!(z.values(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn nearest_ties_prefer_lower_index() {
        let y = DenseMatrix::from_rows(&[[0.0, 0.0], [5.0, 5.0], [6.0, 6.0]]).unwrap();
        let u = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]).unwrap();
        let (z, _) = build_z(&y, &LandmarkSet { u }, &AnchorConfig::new(3, 2)).unwrap();
        assert_eq!(z.row(0).0, &[0, 1]);
    }

    #[test]
    fn normalized_similarity_is_bistochastic() {
        let y = random_points(120, 4, 5);
        let aff = build_affinity(&y, &AnchorConfig::new(15, 3), SeededRng::new(6)).unwrap();
        let s = aff.z_hat.outer_dense();
        assert!(s.asymmetry() < 1e-15);
        for v in s.row_sums().into_iter().chain(s.column_sums()) {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn uniform_z_closed_form() {
        let (n, p) = (6, 3);
        let z = SparseRowMatrix::from_rows(p, (0..n).map(|_| (0..p).map(|j| (j, 1.0 / p as f64)).collect()).collect())
            .unwrap();
        let zh = normalize_z(&z).unwrap();
        let expect = 1.0 / ((n * p) as f64).sqrt();
        assert!(zh.values().iter().all(|v| (v - expect).abs() < 1e-15));
    }

    #[test]
    fn unused_column_stays_empty() {
        let z = SparseRowMatrix::from_rows(3, vec![vec![(0, 1.0)], vec![(0, 0.5), (2, 0.5)]]).unwrap();
        let zh = normalize_z(&z).unwrap();
        assert_eq!(zh.column_sums()[1], 0.0);
        let neg = SparseRowMatrix::from_rows(1, vec![vec![(0, -1.0)]]).unwrap();
        assert!(normalize_z(&neg).is_err());
    }

    #[test]
    fn landmark_selection_cases() {
        let y = random_points(9, 2, 7);
        let all = select_landmarks(&y, 9, SeededRng::new(1)).unwrap();
        let mut hits: Vec<usize> = all.u.row_iter().map(|r| y.row_iter().position(|q| q == r).unwrap()).collect();
        hits.sort();
        assert_eq!(hits, (0..9).collect::<Vec<_>>());
        assert!(select_landmarks(&y, 10, SeededRng::new(1)).is_err());

        let blobs = DenseMatrix::from_rows(&[[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [10.0, 10.0], [10.1, 10.0], [10.0, 10.1]])
            .unwrap();
        let two = select_landmarks(&blobs, 2, SeededRng::new(4)).unwrap();
        let sides: Vec<bool> = two.u.row_iter().map(|r| r[0] > 5.0).collect();
        assert_ne!(sides[0], sides[1]);
        assert_eq!(two, select_landmarks(&blobs, 2, SeededRng::new(4)).unwrap());
    }

    #[test]
    fn config_bounds() {
        assert!(AnchorConfig::new(5, 0).validate(10).is_err());
        assert!(AnchorConfig::new(5, 6).validate(10).is_err());
        assert!(AnchorConfig::new(11, 2).validate(10).is_err());
        let bad = AnchorConfig {
            bandwidth: Bandwidth::GlobalFixed(0.0),
            ..AnchorConfig::new(3, 2)
        };
        assert!(bad.validate(10).is_err());
    }

    #[test]
    fn triplet_dump_format() {
        let z = SparseRowMatrix::from_rows(3, vec![vec![(2, 0.5), (0, 0.25)], vec![(1, 1.0)]]).unwrap();
        let mut buf = Vec::new();
        write_triplets(&mut buf, &z).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0 0 2.5e-1\n0 2 5e-1\n1 1 1e0\n");
    }
}
