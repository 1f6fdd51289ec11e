//! Sentence embedding backends.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ClueError, EmbeddingVector};

/// Dimension of the bundled offline trigram backend.
pub const TRIGRAM_DIM: usize = 256;

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ClueError>;
}

/// Offline backend: hashed character trigrams, L2-normalized.
///
/// Text is lowercased and whitespace-collapsed, then padded with one space
/// on each side so word starts and ends produce their own trigrams. Each
/// trigram is hashed with 64-bit FNV-1a into one of [`TRIGRAM_DIM`] buckets.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrigramEmbedder;

impl TrigramEmbedder {
    pub fn normalize(text: &str) -> String {
        let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
        format!(" {} ", words.join(" "))
    }

    pub fn trigrams(text: &str) -> Vec<String> {
        let chars: Vec<char> = Self::normalize(text).chars().collect();
        chars.windows(3).map(|w| w.iter().collect()).collect()
    }

    pub fn bucket(trigram: &str) -> usize {
        (fnv1a(trigram.as_bytes()) % TRIGRAM_DIM as u64) as usize
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

impl Embedder for TrigramEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ClueError> {
        if text.trim().is_empty() {
            return Err(ClueError::EmptyText);
        }
        let mut values = vec![0.0f64; TRIGRAM_DIM];
        for trigram in Self::trigrams(text) {
            values[Self::bucket(&trigram)] += 1.0;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut values {
            *v /= norm;
        }
        EmbeddingVector::new(values)
    }
}

/// Remote sentence-encoder service.
///
/// Sends `POST {url}` with `{"input": text}` and expects
/// `{"embedding": [f64, ...]}` back.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, ClueError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ClueError::ProviderUnavailable(e.to_string()))?;
        Ok(HttpEmbedder {
            url: url.into(),
            api_key,
            client,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ClueError> {
        if text.trim().is_empty() {
            return Err(ClueError::EmptyText);
        }
        let mut request = self.client.post(&self.url).json(&EmbedRequest { input: text });
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| ClueError::ProviderUnavailable(e.to_string()))?;
        let body: EmbedResponse = response
            .json()
            .map_err(|e| ClueError::ProviderUnavailable(e.to_string()))?;
        EmbeddingVector::new(body.embedding)
    }
}
