//! External clustering indices: accuracy under the best one-to-one label
//! matching, normalized mutual information and the adjusted Rand index.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Optimal one-to-one matching between rows and columns of a cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, column)` pairs, sorted by row; `min(rows, cols)` of them.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

/// Minimum-cost assignment (Hungarian method with potentials, O(n³)).
/// Rectangular inputs are padded with zero-cost dummies.
pub fn hungarian(cost: &DenseMatrix) -> Result<Assignment> {
    if let Some(v) = cost.as_slice().iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("assignment cost {v}"),
        });
    }
    let (rows, cols) = cost.shape();
    let n = rows.max(cols);
    if n == 0 {
        return Ok(Assignment { pairs: vec![], cost: 0.0 });
    }
    let a = |i: usize, j: usize| if i < rows && j < cols { cost[(i, j)] } else { 0.0 };

    // 1-based potentials; p[j] is the row matched to column j, 0 for none.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter(|&j| p[j] - 1 < rows && j - 1 < cols)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(i, j)| cost[(i, j)]).sum();
    Ok(Assignment { pairs, cost: total })
}

/// Co-occurrence counts of predicted and reference labels. Labels are
/// compacted to `0..k` in increasing order of their original value.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    /// `counts[pred][truth]`.
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

impl ContingencyTable {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::dim("contingency table", pred.len(), truth.len()));
        }
        let (pi, kp) = compact(pred);
        let (ti, kt) = compact(truth);
        let mut counts = vec![vec![0u64; kt]; kp];
        for (a, b) in pi.into_iter().zip(ti) {
            counts[a][b] += 1;
        }
        Ok(Self {
            counts,
            n: pred.len() as u64,
        })
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn column_totals(&self) -> Vec<u64> {
        let k = self.counts.first().map_or(0, Vec::len);
        (0..k).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    for &l in labels {
        ids.entry(l).or_insert(0usize);
    }
    for (i, v) in ids.values_mut().enumerate() {
        *v = i;
    }
    (labels.iter().map(|l| ids[l]).collect(), ids.len())
}

/// Fraction of points labelled correctly under the best one-to-one matching
/// of predicted clusters to reference classes.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    if table.n == 0 {
        return Err(Error::invalid("accuracy of an empty labelling"));
    }
    let kp = table.counts.len();
    let kt = table.counts[0].len();
    let neg = DenseMatrix::from_fn(kp, kt, |i, j| -(table.counts[i][j] as f64));
    let matched = -hungarian(&neg)?.cost;
    Ok(matched / table.n as f64)
}

fn entropy(totals: &[u64], n: f64) -> f64 {
    totals
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `I / sqrt(H_pred · H_truth)`, natural logs.
/// Two single-cluster labellings score 1; a single cluster against a
/// non-trivial labelling scores 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    if table.n == 0 {
        return Err(Error::invalid("nmi of an empty labelling"));
    }
    let n = table.n as f64;
    let a = table.row_totals();
    let b = table.column_totals();
    let (ha, hb) = (entropy(&a, n), entropy(&b, n));
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (n * c / (a[i] as f64 * b[j] as f64)).ln();
            }
        }
    }
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

/// Adjusted Rand index with a flag set when the denominator vanishes (both
/// labellings trivial in the same way), in which case the value is 1.
pub fn ari_checked(pred: &[usize], truth: &[usize]) -> Result<(f64, bool)> {
    let table = ContingencyTable::new(pred, truth)?;
    if table.n < 2 {
        return Err(Error::invalid("ari needs at least two points"));
    }
    let pairs = |c: u64| (c * c.saturating_sub(1) / 2) as f64;
    let index: f64 = table.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let sa: f64 = table.row_totals().into_iter().map(pairs).sum();
    let sb: f64 = table.column_totals().into_iter().map(pairs).sum();
    let expected = sa * sb / pairs(table.n);
    let max = 0.5 * (sa + sb);
    let denom = max - expected;
    if denom == 0.0 {
        return Ok((1.0, true));
    }
    Ok(((index - expected) / denom, false))
}

pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    ari_checked(pred, truth).map(|(v, _)| v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn identity_favoring_cost() {
        let c = DenseMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 });
        let a = hungarian(&c).unwrap();
        assert_eq!(a.pairs, (0..4).map(|i| (i, i)).collect::<Vec<_>>());
        assert_eq!(a.cost, 0.0);
    }

    #[test]
    fn matches_brute_force_on_small_integer_costs() {
        let perms = permutations(4);
        // enumerate a deterministic spread of 4x4 matrices with entries in 0..=3
        for code in (0u64..4u64.pow(16)).step_by(1_000_003) {
            let c = DenseMatrix::from_fn(4, 4, |i, j| ((code >> (2 * (4 * i + j))) & 3) as f64);
            let best = perms
                .iter()
                .map(|p| (0..4).map(|i| c[(i, p[i])]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assert_eq!(hungarian(&c).unwrap().cost, best);
        }
    }

    #[test]
    fn row_permutation_permutes_assignment() {
        let c = DenseMatrix::from_rows(&[[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]]).unwrap();
        let base = hungarian(&c).unwrap();
        let perm = [2, 0, 1];
        let pc = DenseMatrix::from_fn(3, 3, |i, j| c[(perm[i], j)]);
        let pa = hungarian(&pc).unwrap();
        assert_eq!(base.cost, pa.cost);
        for (i, j) in pa.pairs {
            assert!(base.pairs.contains(&(perm[i], j)));
        }
    }

    #[test]
    fn rectangular_and_invalid_costs() {
        let c = DenseMatrix::from_rows(&[[5.0, 1.0, 9.0], [1.0, 7.0, 8.0]]).unwrap();
        let a = hungarian(&c).unwrap();
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(a.cost, 2.0);
        let t = hungarian(&c.transpose()).unwrap();
        assert_eq!(t.cost, 2.0);
        assert_eq!(t.pairs.len(), 2);
        let mut bad = DenseMatrix::zeros(2, 2);
        bad.as_mut_slice()[1] = f64::INFINITY;
        assert!(hungarian(&bad).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[2, 0, 1, 1], &[0, 1, 2, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap(), 0.75);
        assert!(accuracy(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn nmi_examples() {
        assert!((nmi(&[0, 0, 1, 2], &[5, 5, 3, 1]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(nmi(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap().abs() < 1e-15);
        assert_eq!(nmi(&[3, 3], &[1, 1]).unwrap(), 1.0);
        assert!(nmi(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn ari_examples() {
        assert!((ari(&[0, 0, 1, 1, 2], &[1, 1, 0, 0, 2]).unwrap() - 1.0).abs() < 1e-15);
        assert!((ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(ari_checked(&[0, 0, 0], &[1, 1, 1]).unwrap(), (1.0, true));
        assert_eq!(ari_checked(&[0, 1, 2], &[2, 0, 1]).unwrap(), (1.0, true));
        assert!(ari(&[0], &[0]).is_err());
    }

    #[test]
    fn contingency_totals() {
        let t = ContingencyTable::new(&[0, 0, 7, 7, 7], &[1, 2, 2, 2, 1]).unwrap();
        assert_eq!(t.counts, vec![vec![1, 1], vec![1, 2]]);
        assert_eq!(t.row_totals().iter().sum::<u64>(), t.n);
    }
}
