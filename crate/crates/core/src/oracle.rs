//! Dense `n × n` reference implementations, for small `n` only.
//!
//! Classical normalized spectral clustering on a full Gaussian similarity, and
//! the explicit averaged ensemble similarity `S̄ = (1/m) Σ ẐℓẐℓᵀ`. The
//! eigendecompositions here go through nalgebra so that they share no code
//! with the Gram-matrix route in [`crate::ensemble`].

use nalgebra::{DMatrix, SymmetricEigen};

use crate::ensemble::fix_column_signs;
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansConfig, Partition};
use crate::matrix::{gaussian_kernel, pairwise_sq_dists, row_l2_normalize, DenseMatrix, SparseRowMatrix};

/// Largest `n` the dense ensemble similarity will be built for.
pub const DENSE_GUARD: usize = 2000;

/// Symmetric, nonnegative `n × n` similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSimilarity {
    pub s: DenseMatrix,
}

impl DenseSimilarity {
    pub fn new(s: DenseMatrix) -> Result<Self> {
        if s.asymmetry() > 1e-12 {
            return Err(Error::invalid("similarity matrix is not symmetric"));
        }
        if s.as_slice().iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("similarity matrix has negative entries"));
        }
        Ok(Self { s })
    }

    pub fn n(&self) -> usize {
        self.s.rows()
    }
}

/// `S = D^{-1/2} K D^{-1/2}` for the Gaussian kernel `K` over all pairs of rows
/// of `x` (self-similarity included) and `D = diag(K·1)`.
pub fn dense_normalized_similarity(x: &DenseMatrix, sigma: f64) -> Result<DenseSimilarity> {
    gaussian_kernel(0.0, sigma)?;
    let d2 = pairwise_sq_dists(x, x)?;
    let k = d2.map(|d| (-d / (2.0 * sigma * sigma)).exp());
    let inv_sqrt: Vec<f64> = k.row_sums().iter().map(|d| 1.0 / d.sqrt()).collect();
    let n = x.rows();
    let mut s = DenseMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * k[(i, j)] * inv_sqrt[j]);
    // enforce exact symmetry against rounding in the row scaling
    for i in 0..n {
        for j in (i + 1)..n {
            let v = s[(i, j)];
            s[(j, i)] = v;
        }
    }
    DenseSimilarity::new(s)
}

/// Leading `k` eigenpairs of a symmetric matrix, descending, with the column
/// sign convention of the sparse route.
pub fn dense_top_eigenpairs(s: &DenseMatrix, k: usize) -> Result<(Vec<f64>, DenseMatrix)> {
    let n = s.rows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("need 1 <= k <= n, got k={k}, n={n}")));
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, s.as_slice()));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DenseMatrix::from_fn(n, k, |r, c| eig.eigenvectors[(r, order[c])]);
    fix_column_signs(&mut vecs);
    Ok((values, vecs))
}

/// All eigenvalues, descending.
pub fn dense_eigenvalues(s: &DenseMatrix) -> Vec<f64> {
    let n = s.rows();
    let mut v: Vec<f64> = SymmetricEigen::new(DMatrix::from_row_slice(n, n, s.as_slice()))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Top-`k` eigenvectors, optional row renormalization, then k-means. Returns
/// the partition and the (unnormalized) eigenvector matrix.
pub fn dense_spectral_clustering_with(
    s: &DenseSimilarity,
    k: usize,
    cfg: &KMeansConfig,
    normalize_rows: bool,
) -> Result<(Partition, DenseMatrix)> {
    let (_, b) = dense_top_eigenpairs(&s.s, k)?;
    let features = if normalize_rows { row_l2_normalize(&b) } else { b.clone() };
    let cfg = KMeansConfig { k, ..cfg.clone() };
    Ok((kmeans(&features, &cfg)?, b))
}

/// Classical normalized spectral clustering (rows renormalized before k-means).
pub fn dense_spectral_clustering(s: &DenseSimilarity, k: usize, cfg: &KMeansConfig) -> Result<Partition> {
    dense_spectral_clustering_with(s, k, cfg, true).map(|(p, _)| p)
}

/// Densified `(1/m) Σ ẐℓẐℓᵀ`.
pub fn dense_ensemble_similarity(affinities: &[&SparseRowMatrix]) -> Result<DenseSimilarity> {
    let first = affinities
        .first()
        .ok_or_else(|| Error::invalid("ensemble similarity needs at least one affinity"))?;
    let n = first.rows();
    if n > DENSE_GUARD {
        return Err(Error::invalid(format!("dense oracle limited to n <= {DENSE_GUARD}, got {n}")));
    }
    let m = affinities.len() as f64;
    let mut s = DenseMatrix::zeros(n, n);
    for z in affinities {
        if z.rows() != n {
            return Err(Error::dim("dense_ensemble_similarity", n, z.rows()));
        }
        let zz = z.outer_dense();
        for (o, v) in s.as_mut_slice().iter_mut().zip(zz.as_slice()) {
            *o += v;
        }
    }
    let mut s = s.map(|v| v / m);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    DenseSimilarity::new(s)
}

/// Median Euclidean distance over all distinct pairs of rows.
pub fn median_pairwise_distance(x: &DenseMatrix) -> f64 {
    let n = x.rows();
    let d2 = pairwise_sq_dists(x, x).expect("same width");
    let mut d: Vec<f64> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| d2[(i, j)].sqrt()).collect();
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    }
}
