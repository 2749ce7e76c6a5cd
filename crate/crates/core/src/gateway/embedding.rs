//! Embedding access: a live HTTP provider and a deterministic in-process
//! test provider, both producing 768-dimensional vectors.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::GatewayError;
use crate::stance::Language;

/// All embeddings live in the same 768-dimensional space.
pub const EMBEDDING_DIM: usize = 768;

/// A validated embedding: exactly [`EMBEDDING_DIM`] finite values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    model_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, model_id: impl Into<String>) -> Result<Self, GatewayError> {
        if values.len() != EMBEDDING_DIM {
            return Err(GatewayError::DimensionMismatch {
                expected: EMBEDDING_DIM,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GatewayError::InvalidEmbedding);
        }
        Ok(EmbeddingVector {
            values,
            model_id: model_id.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        cosine(&self.values, &other.values)
    }
}

/// Cosine similarity; zero vectors compare as 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// An embedding provider with language-specific models.
pub trait EmbeddingBackend: Send + Sync {
    fn model_id(&self, lang: Language) -> &str;

    /// Embeds non-empty text. Deterministic for identical
    /// (text, model_id) pairs.
    fn embed(&self, text: &str, lang: Language) -> Result<EmbeddingVector, GatewayError>;
}

/// Deterministic test provider: hash-seeded unit vectors. Identical
/// (model, text) pairs map to identical vectors, so self-similarity is
/// exactly 1 and distinct texts are effectively uncorrelated.
#[derive(Debug, Clone)]
pub struct HashEmbedding {
    model_en: String,
    model_zh: String,
}

impl Default for HashEmbedding {
    fn default() -> Self {
        HashEmbedding {
            model_en: "hash-embed-en".to_string(),
            model_zh: "hash-embed-zh".to_string(),
        }
    }
}

impl HashEmbedding {
    pub fn new(model_en: impl Into<String>, model_zh: impl Into<String>) -> Self {
        HashEmbedding {
            model_en: model_en.into(),
            model_zh: model_zh.into(),
        }
    }
}

impl EmbeddingBackend for HashEmbedding {
    fn model_id(&self, lang: Language) -> &str {
        match lang {
            Language::En => &self.model_en,
            Language::Zh => &self.model_zh,
        }
    }

    fn embed(&self, text: &str, lang: Language) -> Result<EmbeddingVector, GatewayError> {
        let model = self.model_id(lang);
        let mut seed = Sha256::new();
        seed.update(model.as_bytes());
        seed.update([0x1f]);
        seed.update(text.as_bytes());
        let seed = seed.finalize();

        let mut values = Vec::with_capacity(EMBEDDING_DIM);
        let mut counter: u64 = 0;
        while values.len() < EMBEDDING_DIM {
            let mut block = Sha256::new();
            block.update(seed);
            block.update(counter.to_le_bytes());
            let bytes = block.finalize();
            for quad in bytes.chunks_exact(4) {
                if values.len() == EMBEDDING_DIM {
                    break;
                }
                let u = u32::from_le_bytes(quad.try_into().unwrap());
                values.push(f64::from(u) / f64::from(u32::MAX) * 2.0 - 1.0);
            }
            counter += 1;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        } else {
            values[0] = 1.0;
        }
        EmbeddingVector::new(values, model)
    }
}

/// Live provider posting `{"input": text, "model": id}` and expecting
/// `{"embedding": [768 floats]}`.
pub struct HttpEmbedding {
    endpoint: String,
    model_en: String,
    model_zh: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    embedding: Vec<f64>,
}

impl HttpEmbedding {
    pub fn new(
        endpoint: impl Into<String>,
        model_en: impl Into<String>,
        model_zh: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let endpoint = endpoint.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::BackendUnavailable {
                backend_id: endpoint.clone(),
                reason: e.to_string(),
            })?;
        Ok(HttpEmbedding {
            endpoint,
            model_en: model_en.into(),
            model_zh: model_zh.into(),
            api_key,
            client,
        })
    }
}

impl EmbeddingBackend for HttpEmbedding {
    fn model_id(&self, lang: Language) -> &str {
        match lang {
            Language::En => &self.model_en,
            Language::Zh => &self.model_zh,
        }
    }

    fn embed(&self, text: &str, lang: Language) -> Result<EmbeddingVector, GatewayError> {
        let model = self.model_id(lang).to_string();
        let fail = |reason: String| GatewayError::BackendUnavailable {
            backend_id: self.endpoint.clone(),
            reason,
        };
        let mut http = self
            .client
            .post(&self.endpoint)
            .json(&json!({"input": text, "model": model}));
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let response = http.send().map_err(|e| fail(e.to_string()))?;
        if !response.status().is_success() {
            return Err(fail(format!("http status {}", response.status())));
        }
        let parsed: EmbeddingResponse =
            response.json().map_err(|e| fail(format!("bad response body: {e}")))?;
        EmbeddingVector::new(parsed.embedding, model)
    }
}
