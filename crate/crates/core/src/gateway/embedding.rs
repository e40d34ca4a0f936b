use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f32 {
        self.values.iter().map(|v| v * v).sum::<f32>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding backend failed: {0}")]
    Backend(String),
    #[error("embedding has dimension {found}, provider declares {expected}")]
    Dimension { expected: usize, found: usize },
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

pub type EmbeddingHandle = Arc<dyn Embedder>;

/// Cosine similarity. Zero vectors compare as 0.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> f32 {
    let mut dot = 0.0f32;
    let mut na = 0.0f32;
    let mut nb = 0.0f32;
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

pub const LOCAL_DIMENSION: usize = 256;

/// Bag-of-words embedding: each lowercase alphanumeric token is hashed
/// (FNV-1a) into one of `dimension` buckets, then the vector is L2
/// normalized. Deterministic across platforms and runs.
#[derive(Debug, Clone)]
pub struct LocalHashEmbedder {
    dimension: usize,
}

impl Default for LocalHashEmbedder {
    fn default() -> Self {
        Self {
            dimension: LOCAL_DIMENSION,
        }
    }
}

impl LocalHashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }

    pub fn handle() -> EmbeddingHandle {
        Arc::new(Self::default())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl Embedder for LocalHashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let lowered = trimmed.to_lowercase();
        let mut tokens: Vec<&str> = lowered
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        // Punctuation-only input still gets a non-zero vector.
        if tokens.is_empty() {
            tokens.push(lowered.as_str());
        }
        let mut values = vec![0.0f32; self.dimension];
        for token in tokens {
            let bucket = (fnv1a(token.as_bytes()) % self.dimension as u64) as usize;
            values[bucket] += 1.0;
        }
        let norm = values.iter().map(|v| v * v).sum::<f32>().sqrt();
        for v in &mut values {
            *v /= norm;
        }
        Ok(EmbeddingVector { values })
    }
}
