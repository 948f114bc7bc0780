//! Tensor container format and the in-memory matrix types used everywhere else.

mod activations;
mod axt;
mod manifest;
mod sparse;

pub use activations::{flatten_tokens, ActivationMeta, ActivationSet, TokenKind, TokenLayout};
pub use axt::{read_axt, write_axt, AxtTensor, Dtype, TensorData, AXT_MAGIC};
pub use manifest::ExtractionManifest;
pub use sparse::SparseRows;
