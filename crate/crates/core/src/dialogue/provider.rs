//! Language-model backends.

use std::time::Duration;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use super::{DialogueError, PromptBundle};

pub trait LanguageModel: Send + Sync {
    /// Produces the character's reply. Remote backends send
    /// `prompt.rendered`; the structured fields are there for local backends.
    fn complete(&self, prompt: &PromptBundle) -> Result<String, DialogueError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Case-insensitive regular expression tested against the new message.
    pub pattern: String,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedProviderConfig {
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    pub default_reply: String,
}

/// Deterministic backend: the first rule whose pattern matches the new
/// message supplies the reply, otherwise `default_reply`.
#[derive(Debug, Clone)]
pub struct ScriptedProvider {
    rules: Vec<(Regex, String)>,
    default_reply: String,
}

impl ScriptedProvider {
    pub fn new(config: &ScriptedProviderConfig) -> Result<Self, DialogueError> {
        let rules = config
            .rules
            .iter()
            .map(|rule| {
                RegexBuilder::new(&rule.pattern)
                    .case_insensitive(true)
                    .build()
                    .map(|re| (re, rule.reply.clone()))
                    .map_err(|e| DialogueError::InvalidConfig(format!("bad pattern `{}`: {e}", rule.pattern)))
            })
            .collect::<Result<_, _>>()?;
        Ok(ScriptedProvider {
            rules,
            default_reply: config.default_reply.clone(),
        })
    }

    pub fn with_default(reply: impl Into<String>) -> Self {
        ScriptedProvider {
            rules: Vec::new(),
            default_reply: reply.into(),
        }
    }
}

impl LanguageModel for ScriptedProvider {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, DialogueError> {
        let reply = self
            .rules
            .iter()
            .find(|(re, _)| re.is_match(&prompt.new_message))
            .map_or(&self.default_reply, |(_, reply)| reply);
        Ok(reply.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    pub url: String,
    #[serde(default)]
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Sampling parameters copied into the request body as-is.
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
}

fn default_key_env() -> String {
    "STORYBOT_API_KEY".to_owned()
}

fn default_timeout_ms() -> u64 {
    30_000
}

/// Completion-style HTTP backend.
///
/// Posts `{"model", "prompt", "stop", ...params}` and reads
/// `choices[0].text` from the response.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    config: HttpProviderConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    text: String,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig, api_key: Option<String>) -> Result<Self, DialogueError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| DialogueError::ProviderUnavailable(e.to_string()))?;
        Ok(HttpProvider {
            config,
            api_key,
            client,
        })
    }

    /// Reads the API key from the configured environment variable.
    pub fn from_env(config: HttpProviderConfig) -> Result<Self, DialogueError> {
        let key = std::env::var(&config.api_key_env).ok();
        Self::new(config, key)
    }

    fn request_body(&self, prompt: &PromptBundle) -> serde_json::Value {
        let mut body = self.config.params.clone();
        if let Some(model) = &self.config.model {
            body.insert("model".into(), model.clone().into());
        }
        body.insert("prompt".into(), prompt.rendered.clone().into());
        body.entry("stop").or_insert_with(|| vec!["\nUser:".to_owned()].into());
        serde_json::Value::Object(body)
    }
}

impl LanguageModel for HttpProvider {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, DialogueError> {
        let mut request = self.client.post(&self.config.url).json(&self.request_body(prompt));
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response: CompletionResponse = request
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| DialogueError::ProviderUnavailable(e.to_string()))?;
        let text = response
            .choices
            .into_iter()
            .next()
            .map(|c| c.text.trim().to_owned())
            .unwrap_or_default();
        if text.is_empty() {
            return Err(DialogueError::ProviderUnavailable("empty completion".into()));
        }
        Ok(text)
    }
}
