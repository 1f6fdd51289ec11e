//! Engagement statistics derived from an event log.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::events::InboundPayload;
use crate::ids::UserId;
use crate::log::{LogEntry, LogRecord};

/// Members who sent more than this many messages count as active.
pub const DEFAULT_ACTIVE_THRESHOLD: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementMetrics {
    /// Chat messages received in the character's channels.
    pub total_messages: u64,
    /// Vote events, including changed votes.
    pub total_votes: u64,
    /// Messages plus vote events.
    pub total_interactions: u64,
    pub speakers: u64,
    pub active_members: u64,
    pub active_threshold: u64,
    pub active_ratio: f64,
    pub decision_days: u64,
    /// Mean distinct voters over closed decision days.
    pub avg_votes_per_day: f64,
    /// Only present when the community-wide message total is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_share: Option<f64>,
}

pub fn compute_metrics(entries: &[LogEntry], community_total_messages: Option<u64>) -> EngagementMetrics {
    compute_metrics_with(entries, community_total_messages, DEFAULT_ACTIVE_THRESHOLD)
}

pub fn compute_metrics_with(
    entries: &[LogEntry],
    community_total_messages: Option<u64>,
    active_threshold: u64,
) -> EngagementMetrics {
    let mut per_user: BTreeMap<&UserId, u64> = BTreeMap::new();
    let mut total_votes = 0u64;
    let mut voters_per_day = Vec::new();

    for entry in entries {
        match &entry.record {
            LogRecord::Inbound { event } => match event.payload {
                InboundPayload::Chat(_) => *per_user.entry(&event.user_id).or_insert(0) += 1,
                InboundPayload::Vote { .. } => total_votes += 1,
                InboundPayload::Admin(_) => {}
            },
            LogRecord::StoryRelease { release, .. } if release.decision => {
                voters_per_day.push(release.tally.voters);
            }
            _ => {}
        }
    }

    let total_messages: u64 = per_user.values().sum();
    let speakers = per_user.len() as u64;
    let active_members = per_user.values().filter(|&&n| n > active_threshold).count() as u64;
    let decision_days = voters_per_day.len() as u64;
    EngagementMetrics {
        total_messages,
        total_votes,
        total_interactions: total_messages + total_votes,
        speakers,
        active_members,
        active_threshold,
        active_ratio: ratio(active_members, speakers),
        decision_days,
        avg_votes_per_day: ratio(voters_per_day.iter().sum(), decision_days),
        channel_share: community_total_messages.map(|total| ratio(total_messages, total).min(1.0)),
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EngagementMetrics {
    pub fn to_table(&self) -> String {
        let percent = |r: f64| format!("{:.2}%", r * 100.0);
        let mut rows = vec![
            ("total messages", self.total_messages.to_string()),
            ("total votes", self.total_votes.to_string()),
            ("total interactions", self.total_interactions.to_string()),
            ("speakers", self.speakers.to_string()),
            (
                "active members",
                format!("{} (>{} messages)", self.active_members, self.active_threshold),
            ),
            ("active ratio", percent(self.active_ratio)),
            ("decision days", self.decision_days.to_string()),
            ("avg voters per day", format!("{:.2}", self.avg_votes_per_day)),
        ];
        if let Some(share) = self.channel_share {
            rows.push(("channel share", percent(share)));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (key, value) in rows {
            let _ = writeln!(out, "{key:<width$}  {value:>}");
        }
        out
    }
}
