//! Sparse coding and the sparse coding variational autoencoder (SVAE).
//!
//! The crate covers classical sparse coding (ISTA inference with projected
//! gradient dictionary learning), an SVAE with a Laplace prior, linear
//! decoder and either a linear or residual encoder, the whitened-patch and
//! MNIST data pipeline, and the filter diagnostics used to compare a decoder
//! trained with and without unit-norm column projection.

pub mod analysis;
pub mod data;
pub mod error;
pub mod linalg;
pub mod model;
pub mod sparse_coding;
pub mod svae;

pub use error::{Error, Result};
pub use linalg::{Matrix, Rng, Vector};
