use crate::encoder::EmbeddingCache;
use crate::error::{Error, Result};
use crate::numeric::normalize;

/// Buckets touched per token.
pub const HASH_BUCKETS_PER_TOKEN: usize = 3;

/// Deterministic offline text encoder: each token adds ±1 into three hashed
/// buckets, and a sentence is the sum over its tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEncoder {
    pub dim: usize,
    pub seed: u64,
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

// FNV-1a; std's hasher is not stable across releases.
fn fnv1a(bytes: &[u8], start: u64) -> u64 {
    bytes.iter().fold(start, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl HashEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("hash encoder dimension must be >= 2"));
        }
        Ok(Self { dim, seed })
    }

    /// `(bucket, sign)` pairs for one token.
    pub fn token_buckets(&self, token: &str) -> [(usize, f64); HASH_BUCKETS_PER_TOKEN] {
        let base = fnv1a(token.as_bytes(), 0xcbf2_9ce4_8422_2325 ^ mix64(self.seed));
        std::array::from_fn(|k| {
            let h = mix64(base.wrapping_add((k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 40) & 1 == 1 { 1.0 } else { -1.0 };
            (bucket, sign)
        })
    }

    /// Sum of token vectors.
    pub fn pooled(&self, text: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for token in tokenize(text) {
            for (b, s) in self.token_buckets(&token) {
                out[b] += s;
            }
        }
        out
    }
}

/// Source of pooled text vectors.
#[derive(Debug, Clone)]
pub enum TextBackend {
    /// Vectors produced offline by a language model, keyed by row id.
    Cache(EmbeddingCache),
    Hash(HashEncoder),
}

impl TextBackend {
    pub fn dim(&self) -> usize {
        match self {
            TextBackend::Cache(c) => c.dim(),
            TextBackend::Hash(h) => h.dim,
        }
    }

    /// Pooled, pre-LayerNorm vector for one row. The cache backend ignores
    /// `text`; the hash backend ignores `row_id`.
    pub fn pooled(&self, row_id: u64, text: &str) -> Result<Vec<f64>> {
        match self {
            TextBackend::Cache(c) => Ok(c.get(row_id)?.iter().map(|&v| v as f64).collect()),
            TextBackend::Hash(h) => Ok(h.pooled(text)),
        }
    }

    /// LayerNorm (unit gain, zero bias) of the pooled vector.
    pub fn encode(&self, row_id: u64, text: &str, eps: f64) -> Result<Vec<f64>> {
        Ok(normalize(&self.pooled(row_id, text)?, eps).0)
    }
}
