use serde::{Deserialize, Serialize};

use crate::ids::UserId;
use crate::narrative::{Character, StoryState};
use crate::time::Timestamp;

/// Rounds of conversation the character remembers.
pub const DEFAULT_HISTORY_ROUNDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Author {
    User,
    Character,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub author: Author,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<UserId>,
    pub text: String,
    pub timestamp: Timestamp,
}

impl DialogueTurn {
    pub fn user(user_id: impl Into<UserId>, text: impl Into<String>, timestamp: Timestamp) -> Self {
        DialogueTurn {
            author: Author::User,
            user_id: Some(user_id.into()),
            text: text.into(),
            timestamp,
        }
    }

    pub fn character(text: impl Into<String>, timestamp: Timestamp) -> Self {
        DialogueTurn {
            author: Author::Character,
            user_id: None,
            text: text.into(),
            timestamp,
        }
    }
}

/// Index of the first turn of every round.
///
/// A round opens at each user turn. A character turn opens a round only
/// when the current round already has a reply (or nothing precedes it).
fn round_starts(turns: &[DialogueTurn]) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut replied = true;
    for (i, turn) in turns.iter().enumerate() {
        match turn.author {
            Author::User => {
                starts.push(i);
                replied = false;
            }
            Author::Character => {
                if replied {
                    starts.push(i);
                }
                replied = true;
            }
        }
    }
    starts
}

/// The suffix of `turns` holding at most the `k` most recent rounds.
pub fn window_history(turns: &[DialogueTurn], k: usize) -> Vec<DialogueTurn> {
    if k == 0 {
        return Vec::new();
    }
    let starts = round_starts(turns);
    let from = if starts.len() > k { starts[starts.len() - k] } else { 0 };
    turns[from..].to_vec()
}

/// Number of rounds in `turns`.
pub fn count_rounds(turns: &[DialogueTurn]) -> usize {
    round_starts(turns).len()
}

/// The three-part prompt plus the message being answered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub character_name: String,
    pub character_prompt: String,
    pub live_story_prompt: String,
    pub history: Vec<DialogueTurn>,
    pub new_message: String,
    pub rendered: String,
}

impl PromptBundle {
    pub fn render(
        character_name: &str,
        character_prompt: &str,
        live_story_prompt: &str,
        history: &[DialogueTurn],
        new_message: &str,
    ) -> String {
        let mut out = String::new();
        out.push_str("### Character\n");
        out.push_str(character_prompt.trim_end());
        out.push_str("\n\n### Story so far\n");
        out.push_str(live_story_prompt.trim_end());
        out.push_str("\n\n");
        if !history.is_empty() {
            out.push_str("### Recent conversation\n");
            for turn in history {
                let speaker = match turn.author {
                    Author::User => "User",
                    Author::Character => character_name,
                };
                out.push_str(speaker);
                out.push_str(": ");
                out.push_str(&turn.text);
                out.push('\n');
            }
            out.push('\n');
        }
        out.push_str("### New message\nUser: ");
        out.push_str(new_message);
        out.push('\n');
        out.push_str(character_name);
        out.push(':');
        out
    }
}

/// Builds the prompt for answering `new_msg`, keeping the last `rounds`
/// rounds of `turns` as memory.
pub fn assemble_prompt(
    ch: &Character,
    state: &StoryState,
    turns: &[DialogueTurn],
    new_msg: &str,
    rounds: usize,
) -> PromptBundle {
    let history = window_history(turns, rounds);
    let rendered = PromptBundle::render(ch.name(), ch.base_prompt(), &state.live_story_prompt, &history, new_msg);
    PromptBundle {
        character_name: ch.name().to_owned(),
        character_prompt: ch.base_prompt().to_owned(),
        live_story_prompt: state.live_story_prompt.clone(),
        history,
        new_message: new_msg.to_owned(),
        rendered,
    }
}
