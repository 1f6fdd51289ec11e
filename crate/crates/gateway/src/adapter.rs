//! Boundary for chat platform integrations.
//!
//! Nothing in this crate implements it yet. A platform bot would translate
//! its native messages into [`InboundEvent`]s, hand them to an
//! [`crate::EngineHandle`], and deliver the resulting posts back.

use storybot_core::events::{InboundEvent, OutboundPost};

pub trait PlatformAdapter: Send + Sync {
    type Error: std::error::Error + Send + Sync + 'static;

    /// Delivers one post to the platform channel it names.
    fn post(&self, post: &OutboundPost) -> Result<(), Self::Error>;

    /// Registers the callback that receives every inbound platform event.
    fn on_event(&mut self, callback: Box<dyn Fn(InboundEvent) + Send + Sync>);
}
