//! Per-day community voting with one effective vote per user.
//!
//! Votes are mutable until the day closes: a user who votes again replaces
//! their previous vote, mirroring how reaction buttons can be toggled.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{NodeId, UserId};
use crate::narrative::StoryNode;
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VoteError {
    #[error("voting is closed for this day")]
    VotingClosed,
    #[error("choice {0} is not offered today")]
    InvalidChoice(u32),
    #[error("day must close after it opens")]
    EmptyDay,
}

impl VoteError {
    pub fn code(&self) -> &'static str {
        match self {
            VoteError::VotingClosed => "voting-closed",
            VoteError::InvalidChoice(_) => "invalid-choice",
            VoteError::EmptyDay => "invalid-day",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub user_id: UserId,
    pub choice_index: u32,
    pub timestamp: Timestamp,
}

/// Vote counts keyed by choice index.
///
/// `counts` always sums to `voters`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    #[serde(with = "string_keys")]
    pub counts: BTreeMap<u32, u64>,
    pub voters: u64,
}

impl Tally {
    /// A tally with a zero entry for every listed choice.
    pub fn zeroed(indices: impl IntoIterator<Item = u32>) -> Self {
        Tally {
            counts: indices.into_iter().map(|i| (i, 0)).collect(),
            voters: 0,
        }
    }

    /// Builds a tally from raw per-choice counts; `voters` is their sum.
    pub fn from_counts(counts: impl IntoIterator<Item = (u32, u64)>) -> Self {
        let counts: BTreeMap<u32, u64> = counts.into_iter().collect();
        let voters = counts.values().sum();
        Tally { counts, voters }
    }

    pub fn count(&self, choice_index: u32) -> u64 {
        self.counts.get(&choice_index).copied().unwrap_or(0)
    }
}

/// The voting state of the currently open story day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayState {
    pub day_index: u32,
    pub open_node: NodeId,
    /// Choice indices offered by `open_node`; empty on warm-up days.
    pub choices: Vec<u32>,
    pub votes: BTreeMap<UserId, VoteRecord>,
    pub opened_at: Timestamp,
    pub closes_at: Timestamp,
}

impl DayState {
    pub fn open(day_index: u32, node: &StoryNode, opened_at: Timestamp, duration_ms: u64) -> Result<Self, VoteError> {
        if duration_ms == 0 {
            return Err(VoteError::EmptyDay);
        }
        Ok(DayState {
            day_index,
            open_node: node.id.clone(),
            choices: node.choices.iter().map(|c| c.index).collect(),
            votes: BTreeMap::new(),
            opened_at,
            closes_at: opened_at.plus_millis(duration_ms),
        })
    }

    pub fn is_open_at(&self, now: Timestamp) -> bool {
        now < self.closes_at
    }

    /// Records `user_id`'s vote, replacing any earlier vote by the same user.
    pub fn cast_vote(&mut self, user_id: &UserId, choice_index: u32, now: Timestamp) -> Result<(), VoteError> {
        if !self.is_open_at(now) {
            return Err(VoteError::VotingClosed);
        }
        if !self.choices.contains(&choice_index) {
            return Err(VoteError::InvalidChoice(choice_index));
        }
        self.votes.insert(
            user_id.clone(),
            VoteRecord {
                user_id: user_id.clone(),
                choice_index,
                timestamp: now,
            },
        );
        Ok(())
    }

    pub fn tally(&self) -> Tally {
        tally_votes(self)
    }
}

// JSON object keys are strings. Parsing them back by hand keeps tallies
// readable inside internally tagged or flattened records, where serde
// buffers the map and no longer converts "0" to an integer key.
mod string_keys {
    use std::collections::BTreeMap;

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(counts: &BTreeMap<u32, u64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(counts.iter().map(|(k, v)| (k.to_string(), v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u32, u64>, D::Error> {
        BTreeMap::<String, u64>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| k.parse().map(|k| (k, v)).map_err(D::Error::custom))
            .collect()
    }
}

/// Owned-value form of [`DayState::cast_vote`].
pub fn cast_vote(
    mut day: DayState,
    user_id: &UserId,
    choice_index: u32,
    now: Timestamp,
) -> Result<DayState, VoteError> {
    day.cast_vote(user_id, choice_index, now)?;
    Ok(day)
}

pub fn tally_votes(day: &DayState) -> Tally {
    let mut tally = Tally::zeroed(day.choices.iter().copied());
    for vote in day.votes.values() {
        *tally.counts.entry(vote.choice_index).or_insert(0) += 1;
        tally.voters += 1;
    }
    tally
}
