//! Inbound events accepted by the engine and the posts it publishes.

use serde::{Deserialize, Serialize};

use crate::ids::{ChannelId, NodeId, UserId};
use crate::narrative::StoryNode;
use crate::time::Timestamp;
use crate::voting::Tally;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum AdminCommand {
    /// Close the open day immediately.
    CloseDay,
    /// Restart the open day's voting window from now.
    Reopen,
    /// Move the virtual clock (simulation mode only).
    SetClock { virtual_now: Timestamp },
    /// Add a fact to the character prompt.
    Canonize { fact: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum InboundPayload {
    Chat(String),
    Vote {
        choice_index: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        day_index: Option<u32>,
    },
    Admin(AdminCommand),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InboundEvent {
    pub channel: ChannelId,
    pub user_id: UserId,
    pub timestamp: Timestamp,
    #[serde(flatten)]
    pub payload: InboundPayload,
}

impl InboundEvent {
    pub fn chat(
        channel: impl Into<ChannelId>,
        user: impl Into<UserId>,
        text: impl Into<String>,
        at: Timestamp,
    ) -> Self {
        InboundEvent {
            channel: channel.into(),
            user_id: user.into(),
            timestamp: at,
            payload: InboundPayload::Chat(text.into()),
        }
    }

    pub fn vote(channel: impl Into<ChannelId>, user: impl Into<UserId>, choice_index: u32, at: Timestamp) -> Self {
        InboundEvent {
            channel: channel.into(),
            user_id: user.into(),
            timestamp: at,
            payload: InboundPayload::Vote {
                choice_index,
                day_index: None,
            },
        }
    }

    pub fn admin(user: impl Into<UserId>, command: AdminCommand, at: Timestamp) -> Self {
        InboundEvent {
            channel: ChannelId::from("admin"),
            user_id: user.into(),
            timestamp: at,
            payload: InboundPayload::Admin(command),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostKind {
    StoryRelease,
    ChatReply,
    TallyUpdate,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceButton {
    pub index: u32,
    pub emoji: String,
    pub caption: String,
}

/// Anything the engine publishes to a channel.
///
/// `choices` is only set on story releases of decision nodes, `tally` only
/// on tally updates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutboundPost {
    pub kind: PostKind,
    pub channel: ChannelId,
    pub text: String,
    #[serde(default)]
    pub illustrations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<ChoiceButton>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tally: Option<Tally>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub day_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_to: Option<UserId>,
}

impl OutboundPost {
    fn bare(kind: PostKind, channel: ChannelId, text: String) -> Self {
        OutboundPost {
            kind,
            channel,
            text,
            illustrations: Vec::new(),
            choices: None,
            tally: None,
            node: None,
            day_index: None,
            reply_to: None,
        }
    }

    pub fn story_release(channel: ChannelId, node: &StoryNode, day_index: u32) -> Self {
        let choices = node.is_decision().then(|| {
            node.choices
                .iter()
                .map(|c| ChoiceButton {
                    index: c.index,
                    emoji: c.emoji.clone(),
                    caption: c.caption.clone(),
                })
                .collect()
        });
        OutboundPost {
            illustrations: node.illustrations.clone(),
            choices,
            node: Some(node.id.clone()),
            day_index: Some(day_index),
            ..Self::bare(PostKind::StoryRelease, channel, node.body.clone())
        }
    }

    pub fn chat_reply(channel: ChannelId, reply_to: UserId, text: String, illustrations: Vec<String>) -> Self {
        OutboundPost {
            illustrations,
            reply_to: Some(reply_to),
            ..Self::bare(PostKind::ChatReply, channel, text)
        }
    }

    pub fn tally_update(channel: ChannelId, tally: Tally, day_index: u32) -> Self {
        OutboundPost {
            tally: Some(tally),
            day_index: Some(day_index),
            ..Self::bare(PostKind::TallyUpdate, channel, String::new())
        }
    }

    pub fn system(channel: ChannelId, text: impl Into<String>) -> Self {
        Self::bare(PostKind::System, channel, text.into())
    }
}
