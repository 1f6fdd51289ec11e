//! The live engine: owns the mutable story, the open voting day, the
//! per-channel dialogue sessions and the event log.
//!
//! An [`Engine`] is a single-writer state machine. Callers feed it
//! [`InboundEvent`]s and clock ticks in order; it answers with the posts to
//! publish and appends everything it accepted to its [`EventLog`]. Time
//! always comes from the caller, so the same event sequence replays to the
//! same state.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{DialogueError, DialoguePipeline, DialogueSession, DialogueTurn, PipelineTrace};
use crate::events::{AdminCommand, InboundEvent, InboundPayload, OutboundPost};
use crate::ids::{ChannelId, NodeId};
use crate::log::{EventLog, LogEntry, LogError, LogHeader, LogRecord, LOG_SCHEMA_VERSION};
use crate::narrative::{
    advance_story, canonize_fact, validate_package, Character, Defect, NarrativeError, StoryPackage, StoryState,
};
use crate::time::Timestamp;
use crate::voting::{DayState, Tally, VoteError};

pub const DEFAULT_DAY_MS: u64 = 24 * 60 * 60 * 1000;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Vote(#[from] VoteError),
    #[error(transparent)]
    Narrative(#[from] NarrativeError),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("story package has {} defect(s)", .0.len())]
    InvalidPackage(Vec<Defect>),
    #[error("the virtual clock can only be set in simulation mode")]
    NotSimulation,
    #[error("the admin channel does not accept chat or votes")]
    AdminChannel,
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Vote(e) => e.code(),
            EngineError::Narrative(e) => e.code(),
            EngineError::Dialogue(e) => e.code(),
            EngineError::Log(e) => e.code(),
            EngineError::InvalidPackage(_) => "invalid-package",
            EngineError::NotSimulation => "not-simulation",
            EngineError::AdminChannel => "admin-channel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineSettings {
    pub day_duration_ms: u64,
    pub story_channel: ChannelId,
    /// Allows the virtual clock to be moved through admin commands.
    pub simulation: bool,
}

impl Default for EngineSettings {
    fn default() -> Self {
        EngineSettings {
            day_duration_ms: DEFAULT_DAY_MS,
            story_channel: ChannelId::from("story"),
            simulation: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseCause {
    Deadline,
    Admin,
}

/// One closed story day and the node it released.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleaseEvent {
    pub day_index: u32,
    pub closed_node: NodeId,
    pub released_node: NodeId,
    pub tally: Tally,
    /// The closed node offered choices.
    pub decision: bool,
    pub cause: CloseCause,
    /// The released node ends the story.
    pub finished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    CloseDay,
}

/// Result of an accepted inbound event.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Applied {
    pub posts: Vec<OutboundPost>,
    pub trace_id: Option<u64>,
    pub release: Option<ReleaseEvent>,
}

/// What a reader sees of the open day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurrentView {
    pub day_index: u32,
    pub node: NodeId,
    pub post: OutboundPost,
    pub tally: Tally,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closes_at: Option<Timestamp>,
    pub finished: bool,
}

/// Everything replay must reproduce, in a stable serialization order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineSnapshot {
    pub character: Character,
    pub story: StoryState,
    pub day: Option<DayState>,
    pub finished: bool,
    pub releases: Vec<ReleaseEvent>,
    pub sessions: BTreeMap<ChannelId, DialogueSession>,
    pub traces_recorded: u64,
}

impl EngineSnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshots always serialize")
    }
}

pub struct Engine {
    package: Arc<StoryPackage>,
    character: Character,
    story: StoryState,
    day: Option<DayState>,
    finished: bool,
    close_pending: bool,
    releases: Vec<ReleaseEvent>,
    sessions: BTreeMap<ChannelId, DialogueSession>,
    traces: Vec<PipelineTrace>,
    pipeline: DialoguePipeline,
    settings: EngineSettings,
    log: EventLog,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("story", &self.story)
            .field("day", &self.day)
            .field("finished", &self.finished)
            .finish_non_exhaustive()
    }
}

impl Engine {
    /// Validates the package, publishes the start node and opens day 0.
    pub fn start(
        package: Arc<StoryPackage>,
        pipeline: DialoguePipeline,
        settings: EngineSettings,
        mut log: EventLog,
        now: Timestamp,
    ) -> Result<(Engine, OutboundPost), EngineError> {
        let defects = validate_package(&package);
        if !defects.is_empty() {
            return Err(EngineError::InvalidPackage(defects));
        }
        let story = StoryState::begin(&package)?;
        let start = package.start_node()?;
        let day = if start.terminal {
            None
        } else {
            Some(DayState::open(0, start, now, settings.day_duration_ms)?)
        };
        let post = OutboundPost::story_release(settings.story_channel.clone(), start, 0);
        log.append(
            now,
            LogRecord::StoryOpen {
                day_index: 0,
                node: start.id.clone(),
                post: post.clone(),
            },
        )?;
        let engine = Engine {
            character: package.character.clone(),
            finished: start.terminal,
            package,
            story,
            day,
            close_pending: false,
            releases: Vec::new(),
            sessions: BTreeMap::new(),
            traces: Vec::new(),
            pipeline,
            settings,
            log,
        };
        Ok((engine, post))
    }

    pub fn package(&self) -> &StoryPackage {
        &self.package
    }

    pub fn character(&self) -> &Character {
        &self.character
    }

    pub fn story(&self) -> &StoryState {
        &self.story
    }

    pub fn day(&self) -> Option<&DayState> {
        self.day.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    pub fn releases(&self) -> &[ReleaseEvent] {
        &self.releases
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut EventLog {
        &mut self.log
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }

    pub fn session(&self, channel: &ChannelId) -> Option<&DialogueSession> {
        self.sessions.get(channel)
    }

    pub fn trace(&self, id: u64) -> Option<&PipelineTrace> {
        self.traces.get(usize::try_from(id).ok()?)
    }

    pub fn snapshot(&self) -> EngineSnapshot {
        EngineSnapshot {
            character: self.character.clone(),
            story: self.story.clone(),
            day: self.day.clone(),
            finished: self.finished,
            releases: self.releases.clone(),
            sessions: self.sessions.clone(),
            traces_recorded: self.traces.len() as u64,
        }
    }

    /// Story posts for every released node, oldest first.
    pub fn feed(&self) -> Vec<OutboundPost> {
        self.story
            .released
            .iter()
            .enumerate()
            .filter_map(|(day, id)| {
                let node = self.package.nodes.get(id)?;
                Some(OutboundPost::story_release(
                    self.settings.story_channel.clone(),
                    node,
                    day as u32,
                ))
            })
            .collect()
    }

    pub fn current(&self) -> CurrentView {
        let day_index = self.story.released.len().saturating_sub(1) as u32;
        let node = self
            .package
            .nodes
            .get(&self.story.current)
            .expect("current node comes from the validated package");
        CurrentView {
            day_index,
            node: node.id.clone(),
            post: OutboundPost::story_release(self.settings.story_channel.clone(), node, day_index),
            tally: self.day.as_ref().map(DayState::tally).unwrap_or_default(),
            closes_at: self.day.as_ref().map(|d| d.closes_at),
            finished: self.finished,
        }
    }

    /// Reports whether the open day is due. Fires at most once per day.
    pub fn tick(&mut self, now: Timestamp) -> Vec<Action> {
        match &self.day {
            Some(day) if now >= day.closes_at && !self.close_pending => {
                self.close_pending = true;
                vec![Action::CloseDay]
            }
            _ => Vec::new(),
        }
    }

    /// Ticks and performs any due close. Returns the releases it caused.
    pub fn run_due(&mut self, now: Timestamp) -> Result<Vec<(ReleaseEvent, OutboundPost)>, EngineError> {
        let mut out = Vec::new();
        for action in self.tick(now) {
            match action {
                Action::CloseDay => out.push(self.close_day(now, CloseCause::Deadline)?),
            }
        }
        Ok(out)
    }

    /// Closes voting, resolves the branch and publishes the next node. When
    /// that node is terminal the engine enters the finished state and no
    /// new day opens.
    pub fn close_day(
        &mut self,
        now: Timestamp,
        cause: CloseCause,
    ) -> Result<(ReleaseEvent, OutboundPost), EngineError> {
        self.log.check_monotonic(now)?;
        let day = match (&self.day, self.finished) {
            (Some(day), false) => day,
            _ => return Err(NarrativeError::StoryFinished.into()),
        };
        let tally = day.tally();
        let closed = self.package.node(&day.open_node)?;
        let story = advance_story(&self.story, &self.package, &tally)?;
        let released = self.package.node(&story.current)?;
        let next_index = day.day_index + 1;
        let next_day = if released.terminal {
            None
        } else {
            Some(DayState::open(
                next_index,
                released,
                now,
                self.settings.day_duration_ms,
            )?)
        };
        let release = ReleaseEvent {
            day_index: day.day_index,
            closed_node: closed.id.clone(),
            released_node: released.id.clone(),
            tally,
            decision: closed.is_decision(),
            cause,
            finished: released.terminal,
        };
        let post = OutboundPost::story_release(self.settings.story_channel.clone(), released, next_index);
        self.log.append(
            now,
            LogRecord::StoryRelease {
                release: release.clone(),
                post: post.clone(),
            },
        )?;
        self.story = story;
        self.day = next_day;
        self.finished = release.finished;
        self.close_pending = false;
        self.releases.push(release.clone());
        Ok((release, post))
    }

    /// Applies one inbound event at its own timestamp.
    pub fn apply(&mut self, event: InboundEvent) -> Result<Applied, EngineError> {
        self.log.check_monotonic(event.timestamp)?;
        match &event.payload {
            InboundPayload::Chat(text) => {
                let text = text.clone();
                self.apply_chat(event, text)
            }
            InboundPayload::Vote {
                choice_index,
                day_index,
            } => {
                let (choice, day_index) = (*choice_index, *day_index);
                self.apply_vote(event, choice, day_index)
            }
            InboundPayload::Admin(command) => {
                let command = command.clone();
                self.apply_admin(event, command)
            }
        }
    }

    fn apply_chat(&mut self, event: InboundEvent, text: String) -> Result<Applied, EngineError> {
        if event.channel.as_str() == "admin" {
            return Err(EngineError::AdminChannel);
        }
        let turn = DialogueTurn::user(event.user_id.clone(), text, event.timestamp);
        let mut session = self
            .sessions
            .get(&event.channel)
            .cloned()
            .unwrap_or_else(|| DialogueSession::new(event.channel.clone()));
        let (post, trace) = self
            .pipeline
            .handle_message(&mut session, &self.character, &self.story, &turn)?;
        let trace_id = self.traces.len() as u64;
        let ts = event.timestamp;
        self.log.append(ts, LogRecord::Inbound { event })?;
        self.log.append(
            ts,
            LogRecord::Outbound {
                post: post.clone(),
                trace_id: Some(trace_id),
            },
        )?;
        self.sessions.insert(session.channel.clone(), session);
        self.traces.push(trace);
        Ok(Applied {
            posts: vec![post],
            trace_id: Some(trace_id),
            release: None,
        })
    }

    fn apply_vote(&mut self, event: InboundEvent, choice: u32, day_index: Option<u32>) -> Result<Applied, EngineError> {
        let Some(day) = self.day.as_mut().filter(|_| !self.finished) else {
            return Err(VoteError::VotingClosed.into());
        };
        if day_index.is_some_and(|d| d != day.day_index) {
            return Err(VoteError::VotingClosed.into());
        }
        let mut next = day.clone();
        next.cast_vote(&event.user_id, choice, event.timestamp)?;
        let post = OutboundPost::tally_update(self.settings.story_channel.clone(), next.tally(), next.day_index);
        let ts = event.timestamp;
        self.log.append(ts, LogRecord::Inbound { event })?;
        self.log.append(
            ts,
            LogRecord::Outbound {
                post: post.clone(),
                trace_id: None,
            },
        )?;
        *day = next;
        Ok(Applied {
            posts: vec![post],
            ..Applied::default()
        })
    }

    fn apply_admin(&mut self, event: InboundEvent, command: AdminCommand) -> Result<Applied, EngineError> {
        let ts = event.timestamp;
        match command {
            AdminCommand::CloseDay => {
                if self.finished {
                    return Err(NarrativeError::StoryFinished.into());
                }
                self.log.append(ts, LogRecord::Inbound { event })?;
                let (release, post) = self.close_day(ts, CloseCause::Admin)?;
                Ok(Applied {
                    posts: vec![post],
                    trace_id: None,
                    release: Some(release),
                })
            }
            AdminCommand::Reopen => {
                let duration = self.settings.day_duration_ms;
                let Some(day) = self.day.as_mut().filter(|_| !self.finished) else {
                    return Err(NarrativeError::StoryFinished.into());
                };
                let closes_at = ts.plus_millis(duration);
                let post = OutboundPost::system(
                    self.settings.story_channel.clone(),
                    format!("Voting for day {} is open again.", day.day_index),
                );
                self.log.append(ts, LogRecord::Inbound { event })?;
                self.log.append(
                    ts,
                    LogRecord::Outbound {
                        post: post.clone(),
                        trace_id: None,
                    },
                )?;
                day.closes_at = closes_at;
                self.close_pending = false;
                Ok(Applied {
                    posts: vec![post],
                    ..Applied::default()
                })
            }
            AdminCommand::SetClock { .. } => {
                if !self.settings.simulation {
                    return Err(EngineError::NotSimulation);
                }
                self.log.append(ts, LogRecord::Inbound { event })?;
                Ok(Applied::default())
            }
            AdminCommand::Canonize { fact } => {
                let character = canonize_fact(&self.character, &fact)?;
                let post = OutboundPost::system(ChannelId::from("admin"), format!("Canonized: {}", fact.trim()));
                self.log.append(ts, LogRecord::Inbound { event })?;
                self.log.append(
                    ts,
                    LogRecord::Outbound {
                        post: post.clone(),
                        trace_id: None,
                    },
                )?;
                self.character = character;
                Ok(Applied {
                    posts: vec![post],
                    ..Applied::default()
                })
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("incompatible log: schema version {found}, expected {expected}")]
    Incompatible { found: u32, expected: u32 },
    #[error("replay diverged at entry {entry}: {detail}")]
    Divergence { entry: usize, detail: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl ReplayError {
    pub fn code(&self) -> &'static str {
        match self {
            ReplayError::Incompatible { .. } => "incompatible-log",
            ReplayError::Divergence { .. } => "replay-divergence",
            ReplayError::Engine(e) => e.code(),
        }
    }
}

/// Rebuilds an engine from a log.
///
/// `factory` must start an engine the same way the original run did; it
/// receives the timestamp of the recorded story opening (or zero for an
/// empty log). Inbound events are re-applied and each recorded release
/// closes the day at its recorded time. Admin close and clock commands are
/// skipped because their effect is the release record that follows them.
pub fn replay<F>(header: &LogHeader, entries: &[LogEntry], factory: F) -> Result<Engine, ReplayError>
where
    F: FnOnce(Timestamp) -> Result<Engine, EngineError>,
{
    if header.schema_version != LOG_SCHEMA_VERSION {
        return Err(ReplayError::Incompatible {
            found: header.schema_version,
            expected: LOG_SCHEMA_VERSION,
        });
    }
    let Some(first) = entries.first() else {
        return Ok(factory(Timestamp::ZERO)?);
    };
    let LogRecord::StoryOpen { node, .. } = &first.record else {
        return Err(ReplayError::Divergence {
            entry: 0,
            detail: "log does not begin with the story opening".into(),
        });
    };
    let mut engine = factory(first.ts)?;
    if &engine.story.current != node {
        return Err(ReplayError::Divergence {
            entry: 0,
            detail: format!("engine opened at {} but log opened at {node}", engine.story.current),
        });
    }

    for (i, entry) in entries.iter().enumerate().skip(1) {
        match &entry.record {
            LogRecord::StoryOpen { .. } => {
                return Err(ReplayError::Divergence {
                    entry: i,
                    detail: "second story opening".into(),
                })
            }
            LogRecord::Inbound { event } => {
                if matches!(
                    event.payload,
                    InboundPayload::Admin(AdminCommand::CloseDay | AdminCommand::SetClock { .. })
                ) {
                    continue;
                }
                engine.apply(event.clone()).map_err(|e| ReplayError::Divergence {
                    entry: i,
                    detail: format!("recorded event was rejected: {e}"),
                })?;
            }
            LogRecord::StoryRelease { release, .. } => {
                let (replayed, _) = engine.close_day(entry.ts, release.cause)?;
                if &replayed != release {
                    return Err(ReplayError::Divergence {
                        entry: i,
                        detail: format!(
                            "released {} where the log released {}",
                            replayed.released_node, release.released_node
                        ),
                    });
                }
            }
            LogRecord::Outbound { .. } => {}
        }
    }
    Ok(engine)
}
