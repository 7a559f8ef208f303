//! Text to fused semantic representation: pooled text vectors (cached or
//! hashed), LayerNorm, the semantic-fusion mixture and anonymous-id fusion.

mod cache;
mod fusion;
mod hash;

pub use cache::EmbeddingCache;
pub use fusion::{AnonymousField, AnonymousTable, AnonymousVocab, SemanticFusion};
pub use hash::{tokenize, HashEncoder, TextBackend, HASH_BUCKETS_PER_TOKEN};
