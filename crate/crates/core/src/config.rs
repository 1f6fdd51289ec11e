//! Engine configuration file.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clue::{
    ClueCorpus, ClueCorpusLoadError, ClueError, ClueFinder, Embedder, HttpEmbedder, TrigramEmbedder, DEFAULT_THRESHOLD,
};
use crate::dialogue::{
    DialogueError, FilterList, HttpProvider, HttpProviderConfig, LanguageModel, PipelineSettings, ScriptedProvider,
    ScriptedProviderConfig, DEFAULT_HISTORY_ROUNDS,
};
use crate::ids::ChannelId;
use crate::scheduler::{EngineSettings, DEFAULT_DAY_MS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    Clue(#[from] ClueError),
    #[error("clue corpus {path}: {source}")]
    Corpus {
        path: PathBuf,
        #[source]
        source: ClueCorpusLoadError,
    },
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Io { .. } => "io",
            ConfigError::Parse(_) => "malformed-config",
            ConfigError::Dialogue(e) => e.code(),
            ConfigError::Clue(e) => e.code(),
            ConfigError::Corpus { .. } => "malformed-corpus",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum ProviderConfig {
    Scripted(ScriptedProviderConfig),
    Http(HttpProviderConfig),
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Scripted(ScriptedProviderConfig {
            rules: Vec::new(),
            default_reply: "...".into(),
        })
    }
}

impl ProviderConfig {
    pub fn build(&self) -> Result<Arc<dyn LanguageModel>, DialogueError> {
        Ok(match self {
            ProviderConfig::Scripted(cfg) => Arc::new(ScriptedProvider::new(cfg)?),
            ProviderConfig::Http(cfg) => Arc::new(HttpProvider::from_env(cfg.clone())?),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum EmbeddingConfig {
    #[default]
    Trigram,
    Http {
        url: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_embed_timeout")]
        timeout_ms: u64,
    },
}

fn default_embed_timeout() -> u64 {
    10_000
}

impl EmbeddingConfig {
    pub fn build(&self) -> Result<Arc<dyn Embedder>, ClueError> {
        Ok(match self {
            EmbeddingConfig::Trigram => Arc::new(TrigramEmbedder),
            EmbeddingConfig::Http {
                url,
                api_key_env,
                timeout_ms,
            } => {
                let key = api_key_env.as_ref().and_then(|var| std::env::var(var).ok());
                Arc::new(HttpEmbedder::new(url.clone(), key, Duration::from_millis(*timeout_ms))?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default)]
    pub filter_keywords: Vec<String>,
    #[serde(default = "crate::dialogue::default_refusal")]
    pub refusal_template: String,
    #[serde(default = "crate::dialogue::default_apology")]
    pub apology_template: String,
    #[serde(default = "default_rounds")]
    pub history_rounds: usize,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    /// Path to a clue corpus; relative paths resolve against the config file.
    #[serde(default)]
    pub clue_corpus: Option<PathBuf>,
    #[serde(default = "default_threshold")]
    pub clue_threshold: f64,
    #[serde(default = "default_day_ms")]
    pub day_duration_ms: u64,
    #[serde(default = "default_story_channel")]
    pub story_channel: ChannelId,
    #[serde(default)]
    pub simulation: bool,
    /// Where `serve` writes its event log.
    #[serde(default)]
    pub log_path: Option<PathBuf>,
    /// Bearer key for moderator endpoints. Without one they are disabled.
    #[serde(default)]
    pub moderator_key: Option<String>,
    #[serde(default)]
    pub port: Option<u16>,
}

fn default_rounds() -> usize {
    DEFAULT_HISTORY_ROUNDS
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_day_ms() -> u64 {
    DEFAULT_DAY_MS
}

fn default_story_channel() -> ChannelId {
    ChannelId::from("story")
}

impl Default for EngineConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl EngineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.clue_corpus, &mut config.log_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn pipeline_settings(&self) -> Result<PipelineSettings, DialogueError> {
        Ok(PipelineSettings {
            filter: FilterList::new(&self.filter_keywords)?,
            refusal_template: self.refusal_template.clone(),
            apology_template: self.apology_template.clone(),
            history_rounds: self.history_rounds,
        })
    }

    pub fn engine_settings(&self) -> EngineSettings {
        EngineSettings {
            day_duration_ms: self.day_duration_ms,
            story_channel: self.story_channel.clone(),
            simulation: self.simulation,
        }
    }

    /// Loads the configured corpus, or `None` when no corpus is set.
    pub fn clue_finder(&self) -> Result<Option<Arc<ClueFinder>>, ConfigError> {
        let Some(path) = &self.clue_corpus else {
            return Ok(None);
        };
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.clone(),
            source,
        })?;
        let corpus = ClueCorpus::from_json(&text, self.embedding.build()?).map_err(|source| ConfigError::Corpus {
            path: path.clone(),
            source,
        })?;
        Ok(Some(Arc::new(ClueFinder::new(corpus, self.clue_threshold)?)))
    }
}
