//! The conversation system: inbound filter, clue finder, prompt assembly,
//! language model, outbound filter.
//!
//! Stage order is fixed. A blocked message or a clue hit never reaches the
//! language model, and every reply that leaves the pipeline has passed the
//! outbound filter.

mod filter;
mod prompt;
mod provider;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clue::{ClueError, ClueFinder};
use crate::events::OutboundPost;
use crate::ids::{ChannelId, UserId};
use crate::narrative::{Character, StoryState};

pub use filter::{filter_text, FilterList, FilterResult};
pub use prompt::{
    assemble_prompt, count_rounds, window_history, Author, DialogueTurn, PromptBundle, DEFAULT_HISTORY_ROUNDS,
};
pub use provider::{
    HttpProvider, HttpProviderConfig, LanguageModel, ScriptRule, ScriptedProvider, ScriptedProviderConfig,
};

/// Last-resort text for a template that itself trips the filter.
const SILENT_REPLY: &str = "...";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DialogueError {
    #[error("language model unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("filter keywords must not be empty")]
    EmptyKeyword,
    #[error("message text must not be empty")]
    EmptyMessage,
    #[error("invalid dialogue configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Clue(#[from] ClueError),
}

impl DialogueError {
    pub fn code(&self) -> &'static str {
        match self {
            DialogueError::ProviderUnavailable(_) => "provider-unavailable",
            DialogueError::EmptyKeyword => "empty-keyword",
            DialogueError::EmptyMessage => "empty-message",
            DialogueError::InvalidConfig(_) => "invalid-config",
            DialogueError::Clue(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClueHit {
    pub id: String,
    pub score: f64,
}

/// Which stage produced a reply, for moderators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub channel: ChannelId,
    pub user_id: Option<UserId>,
    pub inbound_filter: FilterResult,
    pub clue: Option<ClueHit>,
    pub provider_called: bool,
    /// `None` when the message never got past the inbound filter.
    pub outbound_filter: Option<FilterResult>,
    pub final_reply: String,
}

/// Conversation memory of one channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub channel: ChannelId,
    pub history: Vec<DialogueTurn>,
}

impl DialogueSession {
    pub fn new(channel: impl Into<ChannelId>) -> Self {
        DialogueSession {
            channel: channel.into(),
            history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSettings {
    #[serde(default)]
    pub filter: FilterList,
    /// Reply to a blocked message. `{name}` expands to the character name.
    #[serde(default = "default_refusal")]
    pub refusal_template: String,
    /// Replaces a model reply that failed the outbound filter.
    #[serde(default = "default_apology")]
    pub apology_template: String,
    #[serde(default = "default_rounds")]
    pub history_rounds: usize,
}

pub(crate) fn default_refusal() -> String {
    "{name} narrows her eyes. \"I'm not answering that.\"".to_owned()
}

pub(crate) fn default_apology() -> String {
    "Sorry, I lost my train of thought. Ask me again?".to_owned()
}

fn default_rounds() -> usize {
    DEFAULT_HISTORY_ROUNDS
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            filter: FilterList::default(),
            refusal_template: default_refusal(),
            apology_template: default_apology(),
            history_rounds: DEFAULT_HISTORY_ROUNDS,
        }
    }
}

pub struct DialoguePipeline {
    settings: PipelineSettings,
    clues: Option<Arc<ClueFinder>>,
    provider: Arc<dyn LanguageModel>,
}

impl std::fmt::Debug for DialoguePipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DialoguePipeline")
            .field("settings", &self.settings)
            .field("clues", &self.clues)
            .finish_non_exhaustive()
    }
}

impl DialoguePipeline {
    pub fn new(
        settings: PipelineSettings,
        clues: Option<Arc<ClueFinder>>,
        provider: Arc<dyn LanguageModel>,
    ) -> Result<Self, DialogueError> {
        for (label, template) in [
            ("refusal", &settings.refusal_template),
            ("apology", &settings.apology_template),
        ] {
            if template.trim().is_empty() {
                return Err(DialogueError::InvalidConfig(format!("{label} template is empty")));
            }
            if let FilterResult::Blocked { keyword } = settings.filter.check(&template.replace("{name}", "")) {
                return Err(DialogueError::InvalidConfig(format!(
                    "{label} template contains filtered keyword `{keyword}`"
                )));
            }
        }
        Ok(DialoguePipeline {
            settings,
            clues,
            provider,
        })
    }

    pub fn settings(&self) -> &PipelineSettings {
        &self.settings
    }

    fn template(&self, template: &str, ch: &Character) -> String {
        let text = template.replace("{name}", ch.name());
        if self.settings.filter.check(&text).is_blocked() {
            SILENT_REPLY.to_owned()
        } else {
            text
        }
    }

    /// Runs one user message through every stage.
    ///
    /// On a blocked message the history is left untouched. Otherwise the
    /// user turn and the reply are appended as one round and the stored
    /// history is trimmed to the configured window.
    pub fn handle_message(
        &self,
        session: &mut DialogueSession,
        ch: &Character,
        story: &StoryState,
        inbound: &DialogueTurn,
    ) -> Result<(OutboundPost, PipelineTrace), DialogueError> {
        if inbound.text.trim().is_empty() {
            return Err(DialogueError::EmptyMessage);
        }
        let reply_to = inbound.user_id.clone().unwrap_or_else(|| UserId::from("anonymous"));
        let mut trace = PipelineTrace {
            channel: session.channel.clone(),
            user_id: inbound.user_id.clone(),
            inbound_filter: self.settings.filter.check(&inbound.text),
            clue: None,
            provider_called: false,
            outbound_filter: None,
            final_reply: String::new(),
        };

        if trace.inbound_filter.is_blocked() {
            let text = self.template(&self.settings.refusal_template, ch);
            trace.final_reply = text.clone();
            let post = OutboundPost::chat_reply(session.channel.clone(), reply_to, text, Vec::new());
            return Ok((post, trace));
        }

        let clue = match &self.clues {
            Some(finder) => finder.find(&inbound.text)?,
            None => None,
        };

        let (candidate, illustrations) = match clue {
            Some(hit) => {
                trace.clue = Some(ClueHit {
                    id: hit.entry.id.clone(),
                    score: hit.score,
                });
                (hit.entry.reply_text, hit.entry.image_url.into_iter().collect())
            }
            None => {
                let bundle = assemble_prompt(ch, story, &session.history, &inbound.text, self.settings.history_rounds);
                trace.provider_called = true;
                (self.provider.complete(&bundle)?, Vec::new())
            }
        };

        let outbound = self.settings.filter.check(&candidate);
        let (text, illustrations) = if outbound.is_blocked() {
            (self.template(&self.settings.apology_template, ch), Vec::new())
        } else {
            (candidate, illustrations)
        };
        trace.outbound_filter = Some(outbound);
        trace.final_reply = text.clone();

        session.history.push(inbound.clone());
        session
            .history
            .push(DialogueTurn::character(text.clone(), inbound.timestamp));
        session.history = window_history(&session.history, self.settings.history_rounds);

        let post = OutboundPost::chat_reply(session.channel.clone(), reply_to, text, illustrations);
        Ok((post, trace))
    }
}
