mod common;

use proptest::prelude::*;
use rand::Rng;

use common::{gapped_instances, mixture, projector, Instance};
use scedae::anchor::{build_affinity, AnchorConfig};
use scedae::ensemble::{concat_ensemble, sc_edae, topk_left_singular, ScEdaeConfig};
use scedae::metrics::accuracy;
use scedae::oracle::{dense_ensemble_similarity, dense_spectral_clustering_with};
use scedae::{DenseMatrix, SeededRng};

#[test]
fn sparse_route_matches_dense_projector() {
    for inst in gapped_instances(20, 1e-3) {
        let gap = inst.projector_gap();
        assert!(gap < 1e-6, "n={} k={} gap {gap}", inst.n, inst.k);
    }
}

#[test]
fn member_similarities_and_average_are_bistochastic() {
    for seed in 0..15 {
        let inst = Instance::random(seed);
        for zh in &inst.z_hat {
            let s = zh.outer_dense();
            for v in s.row_sums().into_iter().chain(s.column_sums()) {
                assert!((v - 1.0).abs() <= 1e-10, "member sum {v}");
            }
        }
        let sbar = dense_ensemble_similarity(&inst.blocks()).unwrap();
        for v in sbar.s.row_sums().into_iter().chain(sbar.s.column_sums()) {
            assert!((v - 1.0).abs() <= 1e-10, "ensemble sum {v}");
        }
    }
}

#[test]
fn structural_invariants() {
    for seed in 100..115 {
        let inst = Instance::random(seed);
        for (z, &r) in inst.z.iter().zip(&inst.r) {
            assert_eq!(z.nnz(), inst.n * r);
            for s in z.row_sums() {
                assert!((s - 1.0).abs() <= 1e-12);
            }
        }
        let e = concat_ensemble(&inst.blocks()).unwrap();
        let emb = topk_left_singular(&e.z_bar, inst.k).unwrap();
        assert!((emb.singular_values[0] - 1.0).abs() <= 1e-8);
        let btb = emb.b.t_matmul(&emb.b).unwrap();
        assert!(btb.sub(&DenseMatrix::identity(inst.k)).unwrap().max_abs() <= 1e-8);
    }
}

#[test]
fn dense_and_sparse_pipelines_agree_on_partitions() {
    let mut g = SeededRng::new(5).rng();
    let encodings: Vec<DenseMatrix> = (0..3).map(|_| mixture(150, 3, 3, &mut g)).collect();
    let cfg = ScEdaeConfig::new(3, AnchorConfig::new(15, 3));
    let out = sc_edae(&encodings, &cfg, SeededRng::new(9)).unwrap();
    // rebuild the member affinities from the same streams for the dense path
    let affs: Vec<_> = encodings
        .iter()
        .enumerate()
        .map(|(l, y)| build_affinity(y, &cfg.anchors[0], SeededRng::new(9).derive(l as u64)).unwrap().z_hat)
        .collect();
    let refs: Vec<_> = affs.iter().collect();
    let s = dense_ensemble_similarity(&refs).unwrap();
    let (dense, _) = dense_spectral_clustering_with(&s, 3, &cfg.kmeans, false).unwrap();
    assert_eq!(accuracy(&out.partition.labels, &dense.labels).unwrap(), 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projector_ignores_member_order(seed in 0u64..10_000, shift in 1usize..4) {
        let inst = Instance::random(seed);
        prop_assume!(inst.z_hat.len() > 1 && inst.eigengap() > 1e-3);
        let blocks = inst.blocks();
        let mut rotated = blocks.clone();
        rotated.rotate_left(shift % blocks.len());
        let a = topk_left_singular(&concat_ensemble(&blocks).unwrap().z_bar, inst.k).unwrap().b;
        let b = topk_left_singular(&concat_ensemble(&rotated).unwrap().z_bar, inst.k).unwrap().b;
        let gap = projector(&a).sub(&projector(&b)).unwrap().frobenius_norm();
        prop_assert!(gap < 1e-8, "gap {}", gap);
    }

    #[test]
    fn singular_values_bounded_by_one(seed in 0u64..10_000) {
        let inst = Instance::random(seed);
        let e = concat_ensemble(&inst.blocks()).unwrap();
        let emb = topk_left_singular(&e.z_bar, inst.k).unwrap();
        for w in emb.singular_values.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        prop_assert!(emb.singular_values.iter().all(|&s| s <= 1.0 + 1e-9 && s > 0.0));
    }

    #[test]
    fn row_permutation_permutes_embedding(seed in 0u64..10_000) {
        let mut g = SeededRng::new(seed).rng();
        let y = mixture(60, 2, 3, &mut g);
        let aff = build_affinity(&y, &AnchorConfig::new(8, 3), SeededRng::new(seed)).unwrap();
        let mut order: Vec<usize> = (0..60).collect();
        for i in (1..60).rev() {
            let j = g.random_range(0..=i);
            order.swap(i, j);
        }
        let rows: Vec<Vec<(usize, f64)>> = order
            .iter()
            .map(|&i| {
                let (c, v) = aff.z_hat.row(i);
                c.iter().copied().zip(v.iter().copied()).collect()
            })
            .collect();
        let permuted = scedae::SparseRowMatrix::from_rows(aff.z_hat.cols(), rows).unwrap();
        let ea = topk_left_singular(&aff.z_hat, 4).unwrap();
        // the 3-dim subspace is only defined up to rotation when there is no gap
        prop_assume!(ea.singular_values[2] - ea.singular_values[3] > 1e-3);
        let pa = projector(&topk_left_singular(&aff.z_hat, 3).unwrap().b);
        let pb = projector(&topk_left_singular(&permuted, 3).unwrap().b);
        let expect = DenseMatrix::from_fn(60, 60, |i, j| pa[(order[i], order[j])]);
        prop_assert!(expect.sub(&pb).unwrap().max_abs() < 1e-8);
    }
}
