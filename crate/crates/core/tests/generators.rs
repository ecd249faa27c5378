use scedae::datasets::{gen_chainlink, gen_lsun, gen_tetra, Dataset};
use scedae::kmeans::KMeansConfig;
use scedae::metrics::accuracy;
use scedae::oracle::{dense_normalized_similarity, dense_spectral_clustering};

/// Best dense spectral accuracy over a small bandwidth grid.
fn best_dense_accuracy(ds: &Dataset, sigmas: &[f64]) -> f64 {
    let k = ds.k_true.unwrap();
    let truth = ds.labels.as_ref().unwrap();
    sigmas
        .iter()
        .map(|&s| {
            let sim = dense_normalized_similarity(&ds.x, s).unwrap();
            let p = dense_spectral_clustering(&sim, k, &KMeansConfig::new(k).with_seed(1)).unwrap();
            accuracy(&p.labels, truth).unwrap()
        })
        .fold(0.0, f64::max)
}

#[test]
fn tetra_is_separable_by_dense_spectral_clustering() {
    assert!(best_dense_accuracy(&gen_tetra(3), &[0.3, 0.5, 0.8]) >= 0.95);
}

#[test]
fn lsun_is_separable_by_dense_spectral_clustering() {
    assert!(best_dense_accuracy(&gen_lsun(3), &[0.1, 0.2, 0.4]) >= 0.95);
}

#[test]
fn chainlink_is_separable_by_dense_spectral_clustering() {
    assert!(best_dense_accuracy(&gen_chainlink(3), &[0.1, 0.2]) >= 0.95);
}
