//! Core of storybot: a serialized story whose branches are chosen by
//! community votes, and a chat persona that answers in character.

pub mod clue;
pub mod config;
pub mod dialogue;
pub mod events;
pub mod ids;
pub mod log;
pub mod metrics;
pub mod narrative;
pub mod scheduler;
pub mod simulation;
pub mod time;
pub mod voting;

pub use ids::{ChannelId, NodeId, UserId};
pub use time::{Clock, SystemClock, Timestamp, VirtualClock};
