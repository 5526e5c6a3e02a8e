//! Attacker-side feature machinery: the frozen surrogate backbone, k-means,
//! content tokens and their trigram sets, Jaccard distance, and transcription
//! embeddings.

mod backbone;
mod cache;
mod kmeans;
mod text;
mod tokens;

pub use backbone::{seed_warning, Backbone, BackboneConfig};
pub use cache::TokenCache;
pub use kmeans::{kmeans_fit, sample_fraction, stack_rows, KMeansConfig, KMeansModel};
pub use text::{load_embeddings, save_embeddings, HashedTrigramEmbedder, TextEmbedder, TextEmbedding};
pub use tokens::{collapse_runs, jaccard_distance, tokenize, trigram_set, TokenSequence, TrigramSet};
