use async_trait::async_trait;

use super::{Embedder, EmbeddingError, EmbeddingVector};

pub const MIN_HASH_DIM: usize = 8;

/// XXH64 with seed 0. Its low bits are well mixed, which matters because
/// both the bucket and the sign are taken from them.
pub fn token_hash(bytes: &[u8]) -> u64 {
    xxhash_rust::xxh64::xxh64(bytes, 0)
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Signed feature hashing: every token adds +1 (even hash) or -1 (odd hash)
/// at `hash % dim`, and the sum is L2-normalized.
pub fn deterministic_test_embed(text: &str, dim: usize) -> Result<EmbeddingVector, EmbeddingError> {
    if dim < MIN_HASH_DIM {
        return Err(EmbeddingError::Config(format!(
            "deterministic-test needs dim >= {MIN_HASH_DIM}, got {dim}"
        )));
    }
    let mut values = vec![0.0f64; dim];
    let mut tokens = 0usize;
    for token in tokenize(text) {
        let h = token_hash(token.as_bytes());
        let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
        values[(h % dim as u64) as usize] += sign;
        tokens += 1;
    }
    if tokens == 0 {
        return Err(EmbeddingError::Degenerate("text has no tokens"));
    }
    EmbeddingVector::normalized(values)
}

/// Offline stand-in for a real encoder.
#[derive(Debug, Clone)]
pub struct DeterministicEmbedder {
    dim: usize,
}

impl DeterministicEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbeddingError> {
        if dim < MIN_HASH_DIM {
            return Err(EmbeddingError::Config(format!(
                "deterministic-test needs dim >= {MIN_HASH_DIM}, got {dim}"
            )));
        }
        Ok(Self { dim })
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        deterministic_test_embed(text, self.dim)
    }
}

#[async_trait]
impl Embedder for DeterministicEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    async fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}
