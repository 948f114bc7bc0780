//! Archetype-constrained sparse autoencoder and its supporting pieces.

mod adam;
mod kmeans;
mod sae;
mod topk;

pub use adam::{Adam, TrainConfig};
pub use kmeans::{kmeans, KMeansModel};
pub use sae::{decode, encode, r_squared, train_sae, train_sae_on_rows, ArchetypalSae, EpochStats, SaeShape, Sparsity, TrainedSae};
pub use topk::{batch_topk, row_topk};
