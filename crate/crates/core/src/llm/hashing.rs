//! Offline feature-hashing embedder.
//!
//! Lowercased alphanumeric words are hashed into a fixed number of buckets
//! with a sign bit. Deterministic and dependency-free, so it works for
//! tests, the browser demo, and runs without an embedding endpoint.

use sha2::{Digest, Sha256};

use super::{Embedder, LlmError};

#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
    name: String,
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        HashingEmbedder {
            dimension: dimension.max(1),
            name: format!("hashing-{dimension}"),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        for word in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
        {
            let h = Sha256::digest(word.to_lowercase().as_bytes());
            let bucket =
                u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) as usize % self.dimension;
            let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        v
    }
}

impl Embedder for HashingEmbedder {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}
