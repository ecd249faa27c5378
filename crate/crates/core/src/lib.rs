//! Spectral clustering over an ensemble of deep autoencoder encodings.
//!
//! Each of `m` autoencoders, trained under a different hyperparameter setting,
//! yields an encoding of the data. Every encoding is summarized by a sparse
//! point-to-landmark affinity, the affinities are concatenated into one sparse
//! ensemble matrix, and its leading left singular vectors give a spectral
//! embedding shared by all members. A final k-means on that embedding produces
//! the partition.
//!
//! The dense reference path in [`oracle`] rebuilds the same embedding from the
//! full `n × n` ensemble similarity and is used to check the sparse route.

pub mod anchor;
pub mod autoencoder;
pub mod datasets;
pub mod eigen;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod kmeans;
pub mod matrix;
pub mod metrics;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
pub use matrix::{DenseMatrix, SparseRowMatrix};
pub use rng::SeededRng;
