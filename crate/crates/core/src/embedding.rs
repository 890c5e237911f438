//! Embedding backends.
//!
//! [`HashingEmbedder`] is a deterministic, offline bag-of-words embedder
//! (FNV-1a-64 feature hashing, L2-normalised). [`HttpEmbedder`] talks to
//! an OpenAI-compatible `/embeddings` endpoint.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::http::Endpoint;
use crate::par::{self, Execution};

pub const DEFAULT_DIMENSION: usize = 256;
pub const HASHING_MODEL: &str = "hashing-fnv1a";

const FNV_OFFSET_BASIS: u64 = 14695981039346656037;
const FNV_PRIME: u64 = 1099511628211;
const HTTP_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("empty input{}", index_suffix(*.index))]
    EmptyInput { index: Option<usize> },
    #[error("embedding backend error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Backend {
        status: Option<u16>,
        message: String,
        index: Option<usize>,
    },
    #[error("non-finite embedding component")]
    NonFinite,
}

fn index_suffix(index: Option<usize>) -> String {
    index.map(|i| format!(" at batch index {i}")).unwrap_or_default()
}

impl EmbedError {
    fn at(self, i: usize) -> Self {
        match self {
            EmbedError::EmptyInput { .. } => EmbedError::EmptyInput { index: Some(i) },
            EmbedError::Backend { status, message, .. } => EmbedError::Backend {
                status,
                message,
                index: Some(i),
            },
            other => other,
        }
    }
}

/// Dense embedding; every component is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbedError;
    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingUsage {
    pub model: String,
    pub token_count: u64,
}

pub trait Embedder: Send + Sync {
    /// Model name used for cost lookup.
    fn model(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<(EmbeddingVector, EmbeddingUsage)>, EmbedError>;

    fn embed_text(&self, text: &str) -> Result<(EmbeddingVector, EmbeddingUsage), EmbedError> {
        let mut out = self
            .embed_batch(&[text.to_string()])
            .map_err(|e| match e {
                EmbedError::EmptyInput { .. } => EmbedError::EmptyInput { index: None },
                EmbedError::Backend { status, message, .. } => EmbedError::Backend {
                    status,
                    message,
                    index: None,
                },
                other => other,
            })?;
        out.pop().ok_or(EmbedError::Backend {
            status: None,
            message: "backend returned no embedding".into(),
            index: None,
        })
    }
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET_BASIS;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Feature-hashing embedder.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
    model: String,
    execution: Execution,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self {
            dimension,
            model: HASHING_MODEL.to_string(),
            execution: Execution::Parallel,
        }
    }

    /// Overrides the model name reported in usage records.
    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    fn embed_one(&self, text: &str) -> Result<(EmbeddingVector, EmbeddingUsage), EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyInput { index: None });
        }
        let tokens = tokenize(text);
        if tokens.is_empty() {
            // nothing to hash, so the vector cannot be normalised
            return Err(EmbedError::EmptyInput { index: None });
        }
        let mut buckets = vec![0.0f64; self.dimension];
        for t in &tokens {
            let bucket = (fnv1a64(t.as_bytes()) % self.dimension as u64) as usize;
            buckets[bucket] += 1.0;
        }
        let norm = buckets.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut buckets {
            *v /= norm;
        }
        Ok((
            EmbeddingVector(buckets),
            EmbeddingUsage {
                model: self.model.clone(),
                token_count: tokens.len() as u64,
            },
        ))
    }
}

impl Embedder for HashingEmbedder {
    fn model(&self) -> &str {
        &self.model
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<(EmbeddingVector, EmbeddingUsage)>, EmbedError> {
        par::map_indexed(self.execution, texts, |i, t| self.embed_one(t).map_err(|e| e.at(i)))
            .into_iter()
            .collect()
    }
}

/// OpenAI-compatible `/embeddings` client.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    endpoint: Endpoint,
    model: String,
    dimension: usize,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(endpoint: Endpoint, model: impl Into<String>, dimension: usize) -> Self {
        let agent = endpoint.agent();
        Self {
            endpoint,
            model: model.into(),
            dimension,
            agent,
        }
    }

    fn request(&self, offset: usize, texts: &[String]) -> Result<Vec<(EmbeddingVector, EmbeddingUsage)>, EmbedError> {
        let body = json!({ "model": self.model, "input": texts });
        let response = self
            .endpoint
            .post_json(&self.agent, "embeddings", &body)
            .map_err(|f| EmbedError::Backend {
                status: f.status,
                message: f.message,
                index: Some(offset),
            })?;
        let malformed = |message: String| EmbedError::Backend {
            status: Some(200),
            message,
            index: Some(offset),
        };
        let data = response["data"]
            .as_array()
            .ok_or_else(|| malformed("response has no `data` array".into()))?;
        if data.len() != texts.len() {
            return Err(malformed(format!("expected {} embeddings, got {}", texts.len(), data.len())));
        }
        let mut vectors: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let slot = item["index"].as_u64().map(|i| i as usize).unwrap_or(pos);
            let values: Vec<f64> = item["embedding"]
                .as_array()
                .ok_or_else(|| malformed(format!("item {pos} has no `embedding`")))?
                .iter()
                .map(Value::as_f64)
                .collect::<Option<_>>()
                .ok_or_else(|| malformed(format!("item {pos} has a non-numeric component")))?;
            if values.len() != self.dimension {
                return Err(malformed(format!(
                    "expected dimension {}, got {}",
                    self.dimension,
                    values.len()
                )));
            }
            let v = EmbeddingVector::new(values).map_err(|_| malformed(format!("item {pos} is not finite")))?;
            *vectors
                .get_mut(slot)
                .ok_or_else(|| malformed(format!("index {slot} out of range")))? = Some(v);
        }
        let total = response["usage"]["total_tokens"]
            .as_u64()
            .or_else(|| response["usage"]["prompt_tokens"].as_u64())
            .unwrap_or(0);
        let tokens = apportion(total, texts);
        vectors
            .into_iter()
            .zip(tokens)
            .map(|(v, token_count)| {
                let v = v.ok_or_else(|| malformed("missing embedding index".into()))?;
                Ok((
                    v,
                    EmbeddingUsage {
                        model: self.model.clone(),
                        token_count,
                    },
                ))
            })
            .collect()
    }
}

/// Splits a batch-level token total across inputs in proportion to their
/// local token counts (largest remainder), so the parts sum to `total`.
fn apportion(total: u64, texts: &[String]) -> Vec<u64> {
    let weights: Vec<u64> = texts.iter().map(|t| tokenize(t).len().max(1) as u64).collect();
    let sum: u64 = weights.iter().sum();
    if sum == 0 {
        return vec![0; texts.len()];
    }
    let mut parts: Vec<u64> = weights.iter().map(|w| total * w / sum).collect();
    let mut remainders: Vec<(u64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| ((total * w) % sum, i))
        .collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let assigned: u64 = parts.iter().sum();
    for (_, i) in remainders.into_iter().take((total - assigned) as usize) {
        parts[i] += 1;
    }
    parts
}

impl Embedder for HttpEmbedder {
    fn model(&self) -> &str {
        &self.model
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<(EmbeddingVector, EmbeddingUsage)>, EmbedError> {
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyInput { index: Some(i) });
        }
        let mut out = Vec::with_capacity(texts.len());
        for (chunk_no, chunk) in texts.chunks(HTTP_BATCH).enumerate() {
            out.extend(self.request(chunk_no * HTTP_BATCH, chunk)?);
        }
        Ok(out)
    }
}
