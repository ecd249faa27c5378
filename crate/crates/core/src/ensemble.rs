//! Ensemble affinity and the shared spectral embedding.
//!
//! The `m` normalized affinities are placed side by side and scaled by
//! `1/√m`, giving `Z̄` with `Z̄Z̄ᵀ = (1/m) Σ ẐℓẐℓᵀ`. The left singular vectors of
//! `Z̄` are therefore the eigenvectors of the averaged similarity, and they are
//! obtained from the small `p' × p'` Gram matrix `Z̄ᵀZ̄` instead of the `n × n`
//! similarity.

use std::ops::Range;

use rayon::prelude::*;

use crate::anchor::{build_affinity, AnchorConfig, SparseAffinity};
use crate::eigen::symmetric_eigen;
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansConfig, Partition};
use crate::matrix::{row_l2_normalize, DenseMatrix, SparseRowMatrix};
use crate::rng::SeededRng;

#[derive(Debug, Clone)]
pub struct EnsembleAffinity {
    pub z_bar: SparseRowMatrix,
    /// Member `ℓ` owns columns `block_offsets[ℓ]..block_offsets[ℓ + 1]`.
    pub block_offsets: Vec<usize>,
    pub m: usize,
}

impl EnsembleAffinity {
    pub fn block(&self, member: usize) -> Range<usize> {
        self.block_offsets[member]..self.block_offsets[member + 1]
    }
}

/// `Z̄ = [Ẑ_1 | … | Ẑ_m] / √m`.
pub fn concat_ensemble(blocks: &[&SparseRowMatrix]) -> Result<EnsembleAffinity> {
    if blocks.is_empty() {
        return Err(Error::invalid("ensemble needs at least one affinity"));
    }
    let m = blocks.len();
    let mut block_offsets = vec![0];
    for b in blocks {
        block_offsets.push(block_offsets.last().unwrap() + b.cols());
    }
    let stacked = SparseRowMatrix::hstack(blocks)?;
    let z_bar = if m == 1 {
        stacked
    } else {
        stacked.scale(1.0 / (m as f64).sqrt())?
    };
    Ok(EnsembleAffinity { z_bar, block_offsets, m })
}

pub fn concat_affinities(affinities: &[SparseAffinity]) -> Result<EnsembleAffinity> {
    let blocks: Vec<&SparseRowMatrix> = affinities.iter().map(|a| &a.z_hat).collect();
    concat_ensemble(&blocks)
}

/// Orthonormal `n × k` embedding and the matching singular values.
#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    pub b: DenseMatrix,
    /// Non-increasing.
    pub singular_values: Vec<f64>,
}

/// Flip each column so that its entry of largest magnitude is positive (the
/// earliest such row wins ties).
pub fn fix_column_signs(b: &mut DenseMatrix) {
    for j in 0..b.cols() {
        let mut best = 0;
        for i in 1..b.rows() {
            if b[(i, j)].abs() > b[(best, j)].abs() {
                best = i;
            }
        }
        if b.rows() > 0 && b[(best, j)] < 0.0 {
            for i in 0..b.rows() {
                b[(i, j)] = -b[(i, j)];
            }
        }
    }
}

/// Top-`k` left singular vectors of `z_bar` through the Gram matrix:
/// `Z̄ᵀZ̄ = VΛVᵀ`, then `b_i = Z̄ v_i / √λ_i` and `s_i = √λ_i`.
pub fn topk_left_singular(z_bar: &SparseRowMatrix, k: usize) -> Result<SpectralEmbedding> {
    let (n, p) = (z_bar.rows(), z_bar.cols());
    if k == 0 || k > p || k > n {
        return Err(Error::invalid(format!("need 1 <= k <= min(n, p'), got k={k}, n={n}, p'={p}")));
    }
    let gram = z_bar.gram();
    let eig = symmetric_eigen(&gram)?;
    let top = eig.values[0].max(0.0);
    let cutoff = top * p as f64 * f64::EPSILON;
    let rank = eig.values.iter().take_while(|&&l| l > cutoff && l > 0.0).count();
    if rank < k {
        return Err(Error::RankDeficient { rank, requested: k });
    }
    let v = eig.vectors.leading_columns(k);
    let mut b = z_bar.mul_dense(&v)?;
    let singular_values: Vec<f64> = eig.values[..k].iter().map(|l| l.sqrt()).collect();
    for i in 0..n {
        for (j, s) in singular_values.iter().enumerate() {
            b[(i, j)] /= s;
        }
    }
    fix_column_signs(&mut b);
    Ok(SpectralEmbedding { b, singular_values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScEdaeConfig {
    /// One anchor setting per member, or a single one shared by all.
    pub anchors: Vec<AnchorConfig>,
    /// Final clustering; `kmeans.k` is the number of clusters and embedding columns.
    pub kmeans: KMeansConfig,
    /// Row-normalize the embedding before the final k-means.
    pub normalize_rows: bool,
}

impl ScEdaeConfig {
    pub fn new(k: usize, anchor: AnchorConfig) -> Self {
        Self {
            anchors: vec![anchor],
            kmeans: KMeansConfig::new(k),
            normalize_rows: false,
        }
    }

    fn anchor_for(&self, member: usize) -> &AnchorConfig {
        if self.anchors.len() == 1 {
            &self.anchors[0]
        } else {
            &self.anchors[member]
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScEdaeOutput {
    pub partition: Partition,
    pub embedding: SpectralEmbedding,
    pub ensemble: EnsembleAffinity,
}

/// Cluster from `m` encodings: per-member landmarks and affinities, ensemble
/// matrix, spectral embedding, then k-means. Member `ℓ` draws its landmarks
/// from `rng.derive(ℓ)`.
pub fn sc_edae(encodings: &[DenseMatrix], cfg: &ScEdaeConfig, rng: SeededRng) -> Result<ScEdaeOutput> {
    let streams: Vec<SeededRng> = (0..encodings.len()).map(|l| rng.derive(l as u64)).collect();
    sc_edae_with_streams(encodings, cfg, &streams)
}

/// As [`sc_edae`] with an explicit landmark stream per member.
pub fn sc_edae_with_streams(
    encodings: &[DenseMatrix],
    cfg: &ScEdaeConfig,
    streams: &[SeededRng],
) -> Result<ScEdaeOutput> {
    let m = encodings.len();
    if m == 0 {
        return Err(Error::invalid("sc_edae needs at least one encoding"));
    }
    if streams.len() != m {
        return Err(Error::dim("sc_edae streams", m, streams.len()));
    }
    if cfg.anchors.len() != 1 && cfg.anchors.len() != m {
        return Err(Error::dim("sc_edae anchor configs", m, cfg.anchors.len()));
    }
    let k = cfg.kmeans.k;
    if k < 2 {
        return Err(Error::invalid("sc_edae needs k >= 2"));
    }
    let n = encodings[0].rows();
    if let Some(l) = encodings.iter().position(|y| y.rows() != n) {
        return Err(Error::dim("sc_edae", format!("{n} rows"), encodings[l].rows()).in_stage("encodings", Some(l)));
    }

    let affinities = encodings
        .par_iter()
        .zip(streams)
        .enumerate()
        .map(|(l, (y, rng))| build_affinity(y, cfg.anchor_for(l), *rng).map_err(|e| e.in_stage("anchor graph", Some(l))))
        .collect::<Result<Vec<_>>>()?;

    let ensemble = concat_affinities(&affinities).map_err(|e| e.in_stage("ensemble", None))?;
    let embedding = topk_left_singular(&ensemble.z_bar, k).map_err(|e| e.in_stage("embedding", None))?;
    let features = if cfg.normalize_rows {
        row_l2_normalize(&embedding.b)
    } else {
        embedding.b.clone()
    };
    let partition = kmeans(&features, &cfg.kmeans).map_err(|e| e.in_stage("final k-means", None))?;
    Ok(ScEdaeOutput {
        partition,
        embedding,
        ensemble,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchor::AnchorConfig;
    use rand::Rng;

    fn random_affinity(n: usize, p: usize, r: usize, seed: u64) -> SparseAffinity {
        let mut rng = SeededRng::new(seed).rng();
        let y = DenseMatrix::from_fn(n, 3, |_, _| rng.random_range(0.0..1.0));
        build_affinity(&y, &AnchorConfig::new(p, r), SeededRng::new(seed + 1)).unwrap()
    }

    #[test]
    fn single_member_is_unscaled() {
        let a = random_affinity(40, 6, 2, 1);
        let e = concat_affinities(std::slice::from_ref(&a)).unwrap();
        assert_eq!(e.z_bar, a.z_hat);
        assert_eq!(e.block(0), 0..6);
    }

    #[test]
    fn duplicated_member_scales_by_inverse_sqrt_two() {
        let a = random_affinity(30, 5, 2, 2);
        let e = concat_ensemble(&[&a.z_hat, &a.z_hat]).unwrap();
        assert_eq!(e.z_bar.nnz(), 2 * a.z_hat.nnz());
        assert_eq!(e.block(1), 5..10);
        for i in 0..30 {
            for j in 0..5 {
                let expect = a.z_hat.get(i, j) * (1.0 / 2f64.sqrt());
                assert_eq!(e.z_bar.get(i, j), expect);
                assert_eq!(e.z_bar.get(i, j + 5), expect);
            }
        }
    }

    #[test]
    fn product_is_average_similarity() {
        let members: Vec<SparseAffinity> = (0..3).map(|s| random_affinity(60, 8, 3, 10 * s)).collect();
        let e = concat_affinities(&members).unwrap();
        let lhs = e.z_bar.outer_dense();
        let mut rhs = DenseMatrix::zeros(60, 60);
        for a in &members {
            let s = a.z_hat.outer_dense();
            for (o, v) in rhs.as_mut_slice().iter_mut().zip(s.as_slice()) {
                *o += v / 3.0;
            }
        }
        assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn mismatched_rows_rejected() {
        let a = random_affinity(30, 5, 2, 3);
        let b = random_affinity(31, 5, 2, 4);
        assert!(concat_ensemble(&[&a.z_hat, &b.z_hat]).is_err());
    }

    #[test]
    fn orthonormal_columns_are_their_own_singular_vectors() {
        // a scaled permutation-like sparse matrix with orthonormal columns
        let z = SparseRowMatrix::from_rows(
            3,
            vec![
                vec![(0, 0.6)],
                vec![(0, 0.8)],
                vec![(1, 1.0)],
                vec![(2, -1.0)],
            ],
        )
        .unwrap();
        let emb = topk_left_singular(&z, 3).unwrap();
        for s in &emb.singular_values {
            assert!((s - 1.0).abs() < 1e-14);
        }
        let dense = z.to_dense();
        for j in 0..3 {
            let col = emb.b.column(j);
            let matched = (0..3).any(|c| {
                let zc = dense.column(c);
                zc.iter().zip(&col).all(|(a, b)| (a - b).abs() < 1e-14)
                    || zc.iter().zip(&col).all(|(a, b)| (a + b).abs() < 1e-14)
            });
            assert!(matched);
        }
    }

    #[test]
    fn leading_singular_value_is_one() {
        let members: Vec<SparseAffinity> = (0..2).map(|s| random_affinity(80, 10, 3, 7 + s)).collect();
        let e = concat_affinities(&members).unwrap();
        let emb = topk_left_singular(&e.z_bar, 3).unwrap();
        assert!((emb.singular_values[0] - 1.0).abs() < 1e-8);
        let first = emb.b.column(0);
        let c = 1.0 / 80f64.sqrt();
        assert!(first.iter().all(|v| ((v - c) / c).abs() < 1e-6));
        let btb = emb.b.t_matmul(&emb.b).unwrap();
        assert!(btb.sub(&DenseMatrix::identity(3)).unwrap().max_abs() < 1e-8);
        assert!(emb.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let z = SparseRowMatrix::from_rows(2, vec![vec![(0, 1.0)], vec![(0, 1.0)], vec![(0, 2.0)]]).unwrap();
        match topk_left_singular(&z, 2) {
            Err(Error::RankDeficient { rank, requested }) => assert_eq!((rank, requested), (1, 2)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(topk_left_singular(&z, 3).is_err());
    }

    #[test]
    fn sign_convention() {
        let mut b = DenseMatrix::from_rows(&[[0.1, -0.5], [-0.9, 0.5], [0.2, 0.1]]).unwrap();
        fix_column_signs(&mut b);
        assert_eq!(b.column(0), vec![-0.1, 0.9, -0.2]);
        assert_eq!(b.column(1), vec![0.5, -0.5, -0.1]);
    }

    #[test]
    fn sc_edae_recovers_separated_groups() {
        let mut rng = SeededRng::new(3).rng();
        let centers = [[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]];
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for _ in 0..60 {
                rows.push([ctr[0] + rng.random_range(-1.0..1.0), ctr[1] + rng.random_range(-1.0..1.0)]);
                truth.push(c);
            }
        }
        let y = DenseMatrix::from_rows(&rows).unwrap();
        let y2 = y.map(|v| 2.0 * v + 1.0);
        let cfg = ScEdaeConfig::new(3, AnchorConfig::new(20, 4));
        let out = sc_edae(&[y, y2], &cfg, SeededRng::new(5)).unwrap();
        assert_eq!(crate::metrics::accuracy(&out.partition.labels, &truth).unwrap(), 1.0);
        assert_eq!(out.ensemble.m, 2);
        assert_eq!(out.embedding.b.shape(), (180, 3));
    }

    #[test]
    fn sc_edae_errors_are_stage_tagged() {
        let y = DenseMatrix::zeros(10, 2);
        let cfg = ScEdaeConfig::new(2, AnchorConfig::new(20, 3));
        let err = sc_edae(&[y], &cfg, SeededRng::new(0)).unwrap_err();
        assert!(err.to_string().starts_with("anchor graph (member 0)"), "{err}");
    }
}
