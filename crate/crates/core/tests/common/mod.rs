//! Independent brute-force oracles and random instance builders shared by the
//! integration and acceptance tests.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, Normal};

use scedae::anchor::{build_z, normalize_z, select_landmarks, AnchorConfig};
use scedae::ensemble::{concat_ensemble, topk_left_singular};
use scedae::oracle::{dense_eigenvalues, dense_ensemble_similarity, dense_top_eigenpairs};
use scedae::{DenseMatrix, SeededRng, SparseRowMatrix};

/// Every permutation of `0..n` (Heap's algorithm order does not matter here).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Best fraction of matches over all bijections between label sets.
pub fn brute_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let kp = pred.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let size = kp.max(kt);
    let mut best = 0;
    for perm in permutations(size) {
        let hits = pred.iter().zip(truth).filter(|(&p, &t)| perm[p] == t).count();
        best = best.max(hits);
    }
    best as f64 / pred.len() as f64
}

/// ARI from counts over all unordered pairs of points.
pub fn brute_ari(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len();
    let (mut a, mut b, mut c, mut d) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in (i + 1)..n {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
    }
    let den = (a + b) * (b + d) + (a + c) * (c + d);
    if den == 0.0 {
        return 1.0;
    }
    2.0 * (a * d - b * c) / den
}

fn entropy(labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0f64; k];
    for &l in labels {
        counts[l] += 1.0;
    }
    counts.iter().filter(|&&c| c > 0.0).map(|&c| -(c / n) * (c / n).ln()).sum()
}

/// `I / √(H·H)` computed directly from joint label frequencies.
pub fn brute_nmi(pred: &[usize], truth: &[usize]) -> f64 {
    let (hp, ht) = (entropy(pred), entropy(truth));
    if hp == 0.0 && ht == 0.0 {
        return 1.0;
    }
    if hp == 0.0 || ht == 0.0 {
        return 0.0;
    }
    let n = pred.len() as f64;
    let mut mi = 0.0;
    let kp = pred.iter().max().unwrap() + 1;
    let kt = truth.iter().max().unwrap() + 1;
    for a in 0..kp {
        for b in 0..kt {
            let joint = pred.iter().zip(truth).filter(|(&p, &t)| p == a && t == b).count() as f64;
            if joint == 0.0 {
                continue;
            }
            let pa = pred.iter().filter(|&&p| p == a).count() as f64;
            let pb = truth.iter().filter(|&&t| t == b).count() as f64;
            mi += joint / n * (joint * n / (pa * pb)).ln();
        }
    }
    mi / (hp * ht).sqrt()
}

/// Minimum assignment cost over all injective row-to-column maps.
pub fn brute_assignment_cost(cost: &DenseMatrix) -> f64 {
    let (r, c) = cost.shape();
    let size = r.max(c);
    permutations(size)
        .into_iter()
        .map(|perm| {
            (0..r)
                .filter(|&i| perm[i] < c)
                .map(|i| cost[(i, perm[i])])
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Random labels in `0..k` that use every label at least once (when n >= k).
pub fn random_partition<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    labels
}

/// Gaussian mixture in `dim` dimensions with `c` well-spread centers.
pub fn mixture<R: Rng>(n: usize, dim: usize, c: usize, rng: &mut R) -> DenseMatrix {
    let centers: Vec<Vec<f64>> = (0..c).map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let noise = Normal::new(0.0, 0.6).unwrap();
    DenseMatrix::from_fn(n, dim, |i, j| centers[i % c][j] + noise.sample(rng))
}

/// One random ensemble problem of the kind used for the SVD equivalence checks.
pub struct Instance {
    pub n: usize,
    pub k: usize,
    /// Row-stochastic Z per member, before column normalization.
    pub z: Vec<SparseRowMatrix>,
    pub z_hat: Vec<SparseRowMatrix>,
    pub r: Vec<usize>,
}

impl Instance {
    pub fn random(seed: u64) -> Self {
        let base = SeededRng::new(seed);
        let mut g = base.rng();
        let n = g.random_range(50..=200);
        let m = g.random_range(1..=4);
        let k = g.random_range(2..=4);
        let c = g.random_range(2..=5);
        let mut z = Vec::new();
        let mut z_hat = Vec::new();
        let mut rs = Vec::new();
        for l in 0..m {
            let dim = g.random_range(2..=5);
            let y = mixture(n, dim, c, &mut g);
            let p = g.random_range(5..=20);
            let r = g.random_range(2..=5);
            let cfg = AnchorConfig::new(p, r);
            let lm = select_landmarks(&y, p, base.derive(l as u64 + 1)).unwrap();
            let (zl, _) = build_z(&y, &lm, &cfg).unwrap();
            z_hat.push(normalize_z(&zl).unwrap());
            z.push(zl);
            rs.push(r);
        }
        Self { n, k, z, z_hat, r: rs }
    }

    pub fn blocks(&self) -> Vec<&SparseRowMatrix> {
        self.z_hat.iter().collect()
    }

    /// Relative gap between the k-th and (k+1)-th eigenvalue of the averaged
    /// similarity; small gaps make the subspace ill-defined.
    pub fn eigengap(&self) -> f64 {
        let s = dense_ensemble_similarity(&self.blocks()).unwrap();
        let vals = dense_eigenvalues(&s.s);
        (vals[self.k - 1] - vals[self.k]) / vals[0]
    }

    /// `‖BBᵀ − UUᵀ‖_F` between the sparse route and the dense eigenvectors.
    pub fn projector_gap(&self) -> f64 {
        let blocks = self.blocks();
        let e = concat_ensemble(&blocks).unwrap();
        let b = topk_left_singular(&e.z_bar, self.k).unwrap().b;
        let s = dense_ensemble_similarity(&blocks).unwrap();
        let (_, u) = dense_top_eigenpairs(&s.s, self.k).unwrap();
        projector(&b).sub(&projector(&u)).unwrap().frobenius_norm()
    }
}

pub fn projector(b: &DenseMatrix) -> DenseMatrix {
    b.matmul_t(b).unwrap()
}

/// Draw instances until `count` of them pass the eigengap filter.
pub fn gapped_instances(count: usize, min_gap: f64) -> Vec<Instance> {
    let mut out = Vec::with_capacity(count);
    let mut seed = 0;
    while out.len() < count {
        let inst = Instance::random(seed);
        seed += 1;
        if inst.eigengap() > min_gap {
            out.push(inst);
        }
    }
    out
}
