//! Entity-alignment kernels for pairs of knowledge graphs.
//!
//! The crate is `no_std` (it needs `alloc`) and has no IO. It covers:
//!
//! - [`graph`]: interned triple stores, seed alignments and seeded train/test splits.
//! - [`features`]: the symmetric-normalized sparse adjacency, relation/attribute
//!   count profiles and the trainable initial node features.
//! - [`encoder`]: the weight-shared two-layer GCN plus highway-gated relation and
//!   attribute channels, with a hand-written backward pass.
//! - [`train`]: the structural margin loss, negative sampling, Adam and the
//!   finite-difference gradient check.
//! - [`semantic`]: the MLP projection of text embeddings and its triplet loss.
//! - [`align`]: fusion, candidate pools, cosine re-ranking and Hits@K.
//!
//! File formats, the CLI and the synthetic dataset generator live in the
//! companion `kgalign` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adam;
pub mod align;
pub mod encoder;
pub mod error;
pub mod features;
pub mod fixture;
pub mod graph;
pub mod linalg;
pub mod semantic;
pub mod sparse;
pub mod train;

pub use error::{Error, Result};
