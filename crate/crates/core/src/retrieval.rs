//! Embeddings and similarity search over memory pools.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::ProviderError;

pub const STUB_DIMENSION: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// L2-normalized embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `values`; a zero vector is rejected.
    pub fn normalized(values: Vec<f64>) -> Option<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return None;
        }
        Some(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Normalized arithmetic mean of `vectors`.
    pub fn centroid<'a, I>(vectors: I) -> Option<Self>
    where
        I: IntoIterator<Item = &'a EmbeddingVector>,
    {
        let mut acc: Vec<f64> = Vec::new();
        for v in vectors {
            if acc.is_empty() {
                acc = vec![0.0; v.dim()];
            }
            for (a, x) in acc.iter_mut().zip(v.values()) {
                *a += x;
            }
        }
        Self::normalized(acc)
    }
}

pub fn cosine_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    1.0 - a.cosine(b)
}

/// Text to vector provider.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, b| {
        (hash ^ u64::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

/// Deterministic bag-of-words embedder: FNV-1a token hashes into fixed buckets.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: STUB_DIMENSION }
    }
}

impl HashingEmbedder {
    pub fn with_dimension(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }
}

impl Embedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(ProviderError::EmptyText);
        }
        let mut counts = vec![0.0; self.dim];
        for token in &tokens {
            counts[self.bucket(token)] += 1.0;
        }
        EmbeddingVector::normalized(counts).ok_or(ProviderError::EmptyText)
    }
}

/// Per-type retrieval caps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalLimits {
    pub max_cases: usize,
    pub max_broad: usize,
    pub max_local: usize,
}

impl Default for RetrievalLimits {
    fn default() -> Self {
        Self {
            max_cases: 5,
            max_broad: 2,
            max_local: 2,
        }
    }
}

/// An embedded, identified pool member.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub id: String,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHit {
    /// Position in the pool slice.
    pub index: usize,
    pub similarity: f64,
}

fn rank(a: &(usize, f64), b: &(usize, f64), pool: &[PoolEntry]) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| pool[a.0].id.cmp(&pool[b.0].id))
}

/// Top-`k` pool entries by cosine similarity; ties go to the smaller id.
pub fn retrieve(query: &EmbeddingVector, pool: &[PoolEntry], k: usize) -> Vec<RetrievalHit> {
    if k == 0 || pool.is_empty() {
        return Vec::new();
    }
    let mut scored: Vec<(usize, f64)> = pool
        .iter()
        .enumerate()
        .map(|(i, e)| (i, query.cosine(&e.embedding)))
        .collect();
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, |a, b| rank(a, b, pool));
        scored.truncate(k);
    }
    scored.sort_by(|a, b| rank(a, b, pool));
    scored
        .into_iter()
        .map(|(index, similarity)| RetrievalHit { index, similarity })
        .collect()
}
