//! Numerical toolkit for studying the geometry of concept dictionaries
//! learned from transformer activations.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`tensor_io`]: the AXT tensor container, activation sets and sparse codes.
//! - [`dictionary`]: k-means and the archetype-constrained sparse autoencoder.
//! - [`archetypal`]: classical archetypal analysis and simplex projection.
//! - [`frames`]: random and approximately Grassmannian reference frames.
//! - [`geometry`]: inner-product, spectral and sparsity diagnostics of a dictionary.
//! - [`stats`]: occurrence statistics, co-activation spectra and baselines.
//! - [`alignment`]: concept importance for linear probes.
//! - [`tokens`]: footprints, positional decoding and per-image PCA maps.
//! - [`mrh`]: polytope and Minkowski-sum constructions with their verifiers.
//!
//! All computation is done in `f64`. Randomness always flows from an explicit
//! seed through named sub-streams (see [`rng`]).

pub mod alignment;
pub mod archetypal;
pub mod dictionary;
pub mod error;
pub mod frames;
pub mod geometry;
pub mod linalg;
pub mod mrh;
pub mod rng;
pub mod stats;
pub mod tensor_io;
pub mod tokens;

pub use error::{Error, Result};
