//! Static-reply lookup: matches a user sentence against a corpus of trigger
//! phrases by embedding similarity and returns the pre-written reply.
//!
//! Corpus keywords are embedded once when the corpus is built. A
//! [`ClueFinder`] holds the current corpus behind an atomically swapped
//! `Arc`, so reloads never disturb in-flight queries.

mod embed;

use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{Embedder, HttpEmbedder, TrigramEmbedder, TRIGRAM_DIM};

/// Match threshold used when none is configured.
pub const DEFAULT_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClueError {
    #[error("invalid vector: {0}")]
    InvalidVector(&'static str),
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("threshold {0} is outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("clue entry `{0}` needs a keyword and a reply")]
    InvalidEntry(String),
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
}

impl ClueError {
    pub fn code(&self) -> &'static str {
        match self {
            ClueError::InvalidVector(_) => "invalid-vector",
            ClueError::EmptyText => "empty-text",
            ClueError::InvalidThreshold(_) => "invalid-threshold",
            ClueError::InvalidEntry(_) => "invalid-entry",
            ClueError::ProviderUnavailable(_) => "provider-unavailable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClueEntry {
    pub id: String,
    pub keyword: String,
    pub reply_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
}

impl ClueEntry {
    pub fn validate(&self) -> Result<(), ClueError> {
        if self.keyword.trim().is_empty() || self.reply_text.trim().is_empty() {
            return Err(ClueError::InvalidEntry(self.id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ClueError> {
        if values.is_empty() {
            return Err(ClueError::InvalidVector("empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ClueError::InvalidVector("non-finite entry"));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// `dot(a, b) / (|a| |b|)`, clamped to [-1, 1] against rounding.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, ClueError> {
    if a.dim() != b.dim() {
        return Err(ClueError::InvalidVector("dimension mismatch"));
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    let na = a.0.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.0.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(ClueError::InvalidVector("zero vector"));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClueMatch {
    pub entry: ClueEntry,
    pub score: f64,
}

/// A clue corpus with its keyword embeddings precomputed.
pub struct ClueCorpus {
    entries: Vec<(ClueEntry, EmbeddingVector)>,
    embedder: Arc<dyn Embedder>,
}

impl std::fmt::Debug for ClueCorpus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClueCorpus")
            .field("entries", &self.entries.len())
            .finish()
    }
}

impl ClueCorpus {
    pub fn build(entries: Vec<ClueEntry>, embedder: Arc<dyn Embedder>) -> Result<Self, ClueError> {
        let mut embedded = Vec::with_capacity(entries.len());
        let mut dim = None;
        for entry in entries {
            entry.validate()?;
            let vector = embedder.embed(&entry.keyword)?;
            if *dim.get_or_insert(vector.dim()) != vector.dim() {
                return Err(ClueError::InvalidVector("dimension differs within corpus"));
            }
            embedded.push((entry, vector));
        }
        Ok(ClueCorpus {
            entries: embedded,
            embedder,
        })
    }

    pub fn empty(embedder: Arc<dyn Embedder>) -> Self {
        ClueCorpus {
            entries: Vec::new(),
            embedder,
        }
    }

    pub fn from_json(text: &str, embedder: Arc<dyn Embedder>) -> Result<Self, ClueCorpusLoadError> {
        let entries: Vec<ClueEntry> = serde_json::from_str(text)?;
        Ok(Self::build(entries, embedder)?)
    }

    pub fn entries(&self) -> impl Iterator<Item = &ClueEntry> {
        self.entries.iter().map(|(e, _)| e)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Best entry scoring at least `threshold`; earlier entries win ties.
    pub fn find(&self, sentence: &str, threshold: f64) -> Result<Option<ClueMatch>, ClueError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(ClueError::InvalidThreshold(threshold));
        }
        if self.entries.is_empty() {
            return Ok(None);
        }
        let query = self.embedder.embed(sentence)?;
        let mut best: Option<(usize, f64)> = None;
        for (i, (_, vector)) in self.entries.iter().enumerate() {
            let score = cosine_similarity(&query, vector)?;
            if score >= threshold && best.is_none_or(|(_, s)| score > s) {
                best = Some((i, score));
            }
        }
        Ok(best.map(|(i, score)| ClueMatch {
            entry: self.entries[i].0.clone(),
            score,
        }))
    }
}

/// Free-function form of [`ClueCorpus::find`].
pub fn find_clue(sentence: &str, corpus: &ClueCorpus, threshold: f64) -> Result<Option<ClueMatch>, ClueError> {
    corpus.find(sentence, threshold)
}

#[derive(Debug, Error)]
pub enum ClueCorpusLoadError {
    #[error("malformed clue corpus: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Clue(#[from] ClueError),
}

/// Shared, hot-swappable clue lookup used both in-process and by the
/// standalone HTTP service.
#[derive(Debug)]
pub struct ClueFinder {
    corpus: RwLock<Arc<ClueCorpus>>,
    threshold: f64,
}

impl ClueFinder {
    pub fn new(corpus: ClueCorpus, threshold: f64) -> Result<Self, ClueError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(ClueError::InvalidThreshold(threshold));
        }
        Ok(ClueFinder {
            corpus: RwLock::new(Arc::new(corpus)),
            threshold,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn corpus(&self) -> Arc<ClueCorpus> {
        self.corpus.read().expect("clue corpus lock poisoned").clone()
    }

    /// Replaces the corpus in one step.
    pub fn replace(&self, corpus: ClueCorpus) {
        *self.corpus.write().expect("clue corpus lock poisoned") = Arc::new(corpus);
    }

    /// Embeds `entries` with the current corpus's backend, then swaps.
    pub fn reload(&self, entries: Vec<ClueEntry>) -> Result<(), ClueError> {
        let embedder = self.corpus().embedder.clone();
        self.replace(ClueCorpus::build(entries, embedder)?);
        Ok(())
    }

    pub fn find(&self, sentence: &str) -> Result<Option<ClueMatch>, ClueError> {
        self.corpus().find(sentence, self.threshold)
    }
}
