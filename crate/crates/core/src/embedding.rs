//! Dense text embeddings and cosine similarity.
//!
//! The local embedder is a seeded feature-hashing model over character
//! n-grams: lowercase, hash every n-gram into one of `dimension` buckets,
//! count, then L2-normalize. A remote provider can be plugged in through
//! [`EmbeddingTransport`]; its vectors are validated and normalized the same
//! way so every [`Embedding`] is unit-norm regardless of origin.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DIMENSION: usize = 256;
pub const DEFAULT_NGRAM_SIZE: usize = 3;
pub const MIN_DIMENSION: usize = 8;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("text is empty after trimming whitespace")]
    EmptyText,
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid embedder configuration: {0}")]
    InvalidConfig(String),
    #[error("vector has no usable direction (zero norm or non-finite component)")]
    DegenerateVector,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
}

/// A unit-norm vector representing a span of text.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// Normalizes `values` to unit length. Fails on empty, zero or non-finite input.
    pub fn normalized(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::DegenerateVector);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbeddingError::DegenerateVector);
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Embedding::normalized(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.values
    }
}

impl fmt::Debug for Embedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Embedding")
            .field("dimension", &self.values.len())
            .finish()
    }
}

/// Dot product of two unit vectors. No re-normalization is applied.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, EmbeddingError> {
    if a.dimension() != b.dimension() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dimension(),
            actual: b.dimension(),
        });
    }
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum())
}

/// Cosine clamped into `[0, 1]`, the form every threshold and ranking uses.
pub fn clamped_similarity(a: &Embedding, b: &Embedding) -> Result<f64, EmbeddingError> {
    cosine_similarity(a, b).map(|s| s.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProviderKind {
    #[default]
    LocalHash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub dimension: usize,
    pub ngram_size: usize,
    pub seed: u64,
    pub provider: ProviderKind,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
            ngram_size: DEFAULT_NGRAM_SIZE,
            seed: 0,
            provider: ProviderKind::LocalHash,
        }
    }
}

impl EmbedderConfig {
    pub fn with_dimension(mut self, dimension: usize) -> Self {
        self.dimension = dimension;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if self.dimension < MIN_DIMENSION {
            return Err(EmbeddingError::InvalidConfig(format!(
                "dimension must be >= {MIN_DIMENSION}, got {}",
                self.dimension
            )));
        }
        if self.ngram_size == 0 {
            return Err(EmbeddingError::InvalidConfig("ngram_size must be positive".into()));
        }
        Ok(())
    }
}

/// Anything that turns text into an [`Embedding`].
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError>;
    fn dimension(&self) -> usize;
}

/// Seeded feature-hashing embedder over character n-grams.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    config: EmbedderConfig,
}

impl HashEmbedder {
    pub fn new(config: EmbedderConfig) -> Result<Self, EmbeddingError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    fn bucket(&self, gram: &str) -> usize {
        let mut h = FNV_OFFSET;
        for b in self.config.seed.to_le_bytes().iter().chain(gram.as_bytes()) {
            h ^= u64::from(*b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        (h % self.config.dimension as u64) as usize
    }
}

/// Lowercases, collapses whitespace runs to one space and trims.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Character n-grams of already-normalized text. Text shorter than `n`
/// yields itself as the single gram.
pub fn char_ngrams(text: &str, n: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() <= n {
        return vec![text.to_string()];
    }
    chars.windows(n).map(|w| w.iter().collect()).collect()
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        let normalized = normalize_text(text);
        if normalized.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let mut counts = vec![0.0f64; self.config.dimension];
        for gram in char_ngrams(&normalized, self.config.ngram_size) {
            counts[self.bucket(&gram)] += 1.0;
        }
        Embedding::normalized(counts)
    }

    fn dimension(&self) -> usize {
        self.config.dimension
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResponse {
    pub vector: Vec<f64>,
}

/// Transport for a remote embedding service. Retries are the caller's concern.
pub trait EmbeddingTransport: Send + Sync {
    fn fetch(&self, request: &EmbeddingRequest) -> Result<EmbeddingResponse, String>;
}

/// Embedder backed by a remote provider.
#[derive(Clone)]
pub struct RemoteEmbedder {
    dimension: usize,
    transport: Arc<dyn EmbeddingTransport>,
}

impl RemoteEmbedder {
    pub fn new(dimension: usize, transport: Arc<dyn EmbeddingTransport>) -> Self {
        Self { dimension, transport }
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let response = self
            .transport
            .fetch(&EmbeddingRequest { text: text.to_string() })
            .map_err(EmbeddingError::ProviderUnavailable)?;
        if response.vector.len() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dimension,
                actual: response.vector.len(),
            });
        }
        Embedding::normalized(response.vector)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}
