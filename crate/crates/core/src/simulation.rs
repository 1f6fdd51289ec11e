//! Scripted multi-day runs under a virtual clock.
//!
//! A [`SimulationScript`] describes hand-written agents plus an optional
//! seeded crowd. The runner walks the story day by day: every action that
//! falls inside the open day is applied in time order, then the day is
//! closed at its deadline. Nothing here reads the wall clock, so a script,
//! package and seed always produce the same log bytes.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clue::{ClueCorpus, ClueEntry, ClueError, ClueFinder, TrigramEmbedder, DEFAULT_THRESHOLD};
use crate::dialogue::{
    DialogueError, DialoguePipeline, FilterList, PipelineSettings, ScriptedProvider, ScriptedProviderConfig,
};
use crate::events::InboundEvent;
use crate::ids::{ChannelId, NodeId, UserId};
use crate::log::{EventLog, LogEntry, LogHeader};
use crate::metrics::{compute_metrics, EngagementMetrics};
use crate::narrative::StoryPackage;
use crate::scheduler::{replay, Engine, EngineError, EngineSettings, ReleaseEvent, ReplayError};
use crate::time::{Clock, Timestamp, VirtualClock};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("malformed simulation script: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("script does not fit the package: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    Clue(#[from] ClueError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

impl SimulationError {
    pub fn code(&self) -> &'static str {
        match self {
            SimulationError::Parse(_) => "malformed-script",
            SimulationError::Mismatch(_) => "script-mismatch",
            SimulationError::Dialogue(e) => e.code(),
            SimulationError::Clue(e) => e.code(),
            SimulationError::Engine(e) => e.code(),
            SimulationError::Replay(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Chat(String),
    Vote(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAction {
    /// Story day the action belongs to, counting the opening day as 0.
    pub day: u32,
    /// Milliseconds after that day opened.
    #[serde(default)]
    pub offset_ms: u64,
    #[serde(flatten)]
    pub kind: ActionKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedAgent {
    pub user_id: UserId,
    #[serde(default)]
    pub actions: Vec<AgentAction>,
}

/// Randomized background members, drawn from the run's seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdSpec {
    pub size: u32,
    #[serde(default = "default_prefix")]
    pub user_prefix: String,
    #[serde(default)]
    pub chats_per_day: u32,
    #[serde(default)]
    pub chat_lines: Vec<String>,
    /// Probability that a member votes on a decision day.
    #[serde(default = "default_turnout")]
    pub turnout: f64,
    /// Choice weights per decision day, indexed by choice index. The last
    /// row repeats for later days; no rows means uniform.
    #[serde(default)]
    pub vote_weights: Vec<Vec<f64>>,
}

fn default_prefix() -> String {
    "member".into()
}

fn default_turnout() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationScript {
    /// Length of one compressed story day.
    #[serde(default = "default_day_ms")]
    pub day_duration_ms: u64,
    pub provider: ScriptedProviderConfig,
    #[serde(default)]
    pub filter_keywords: Vec<String>,
    #[serde(default)]
    pub clues: Vec<ClueEntry>,
    #[serde(default = "default_threshold")]
    pub clue_threshold: f64,
    #[serde(default = "default_chat_channel")]
    pub chat_channel: ChannelId,
    #[serde(default = "default_story_channel")]
    pub story_channel: ChannelId,
    #[serde(default)]
    pub agents: Vec<ScriptedAgent>,
    #[serde(default)]
    pub crowd: Option<CrowdSpec>,
}

fn default_day_ms() -> u64 {
    2_000
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_chat_channel() -> ChannelId {
    ChannelId::from("chat")
}

fn default_story_channel() -> ChannelId {
    ChannelId::from("story")
}

impl SimulationScript {
    pub fn from_json(text: &str) -> Result<Self, SimulationError> {
        let script: SimulationScript = serde_json::from_str(text)?;
        if script.day_duration_ms == 0 {
            return Err(SimulationError::Mismatch("day_duration_ms must be positive".into()));
        }
        for agent in &script.agents {
            if let Some(a) = agent.actions.iter().find(|a| a.offset_ms >= script.day_duration_ms) {
                return Err(SimulationError::Mismatch(format!(
                    "{} acts {}ms into day {}, past the day length",
                    agent.user_id, a.offset_ms, a.day
                )));
            }
        }
        if let Some(crowd) = &script.crowd {
            if !(0.0..=1.0).contains(&crowd.turnout) {
                return Err(SimulationError::Mismatch("crowd turnout must be within [0, 1]".into()));
            }
            if crowd.chats_per_day > 0 && crowd.chat_lines.is_empty() {
                return Err(SimulationError::Mismatch("crowd chats need chat_lines".into()));
            }
        }
        Ok(script)
    }

    pub fn engine_settings(&self) -> EngineSettings {
        EngineSettings {
            day_duration_ms: self.day_duration_ms,
            story_channel: self.story_channel.clone(),
            simulation: true,
        }
    }

    pub fn pipeline(&self) -> Result<DialoguePipeline, SimulationError> {
        let settings = PipelineSettings {
            filter: FilterList::new(&self.filter_keywords)?,
            ..PipelineSettings::default()
        };
        let clues = if self.clues.is_empty() {
            None
        } else {
            let corpus = ClueCorpus::build(self.clues.clone(), Arc::new(TrigramEmbedder))?;
            Some(Arc::new(ClueFinder::new(corpus, self.clue_threshold)?))
        };
        let provider = Arc::new(ScriptedProvider::new(&self.provider)?);
        Ok(DialoguePipeline::new(settings, clues, provider)?)
    }

    /// Starts an engine for this script. Replay uses the same factory.
    pub fn start_engine(
        &self,
        package: Arc<StoryPackage>,
        log: EventLog,
        at: Timestamp,
    ) -> Result<Engine, SimulationError> {
        let (engine, _) = Engine::start(package, self.pipeline()?, self.engine_settings(), log, at)?;
        Ok(engine)
    }
}

/// Rebuilds the engine of a simulation from (a prefix of) its log.
pub fn replay_simulation(
    package: Arc<StoryPackage>,
    script: &SimulationScript,
    header: &LogHeader,
    entries: &[LogEntry],
) -> Result<Engine, SimulationError> {
    let pipeline = script.pipeline()?;
    let log = EventLog::in_memory(header.clone());
    let engine = replay(header, entries, |at| {
        Engine::start(package, pipeline, script.engine_settings(), log, at).map(|(engine, _)| engine)
    })?;
    Ok(engine)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub path: Vec<NodeId>,
    pub releases: Vec<ReleaseEvent>,
    pub actions_applied: u64,
    pub ends_at: Timestamp,
    pub metrics: EngagementMetrics,
}

#[derive(Debug, Clone)]
struct Scheduled {
    offset_ms: u64,
    user_id: UserId,
    kind: ActionKind,
}

/// Runs the script to the end of the story.
pub fn run_simulation(
    package: Arc<StoryPackage>,
    script: &SimulationScript,
    seed: u64,
    log: EventLog,
) -> Result<(Engine, SimulationReport), SimulationError> {
    run_simulation_observed(package, script, seed, log, |_| {})
}

/// Like [`run_simulation`], calling `observe` after every accepted event
/// and every day close.
pub fn run_simulation_observed<F>(
    package: Arc<StoryPackage>,
    script: &SimulationScript,
    seed: u64,
    log: EventLog,
    mut observe: F,
) -> Result<(Engine, SimulationReport), SimulationError>
where
    F: FnMut(&Engine),
{
    let clock = VirtualClock::new(Timestamp::ZERO);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut engine = script.start_engine(package, log, clock.now())?;
    observe(&engine);

    let mut applied = 0u64;
    let mut decision_days = 0usize;
    while let Some(day) = engine.day().filter(|_| !engine.is_finished()).cloned() {
        let mut actions: Vec<Scheduled> = script
            .agents
            .iter()
            .flat_map(|agent| {
                agent
                    .actions
                    .iter()
                    .filter(|a| a.day == day.day_index)
                    .map(|a| Scheduled {
                        offset_ms: a.offset_ms,
                        user_id: agent.user_id.clone(),
                        kind: a.kind.clone(),
                    })
            })
            .collect();
        if let Some(crowd) = &script.crowd {
            let weights = if day.choices.is_empty() {
                None
            } else {
                decision_days += 1;
                Some((
                    crowd_weights(crowd, decision_days - 1, &day.choices)?,
                    day.choices.as_slice(),
                ))
            };
            actions.extend(crowd_actions(crowd, &mut rng, script.day_duration_ms, weights.as_ref()));
        }
        actions.sort_by_key(|a| a.offset_ms);

        for action in actions {
            let at = day.opened_at.plus_millis(action.offset_ms);
            clock.set(at);
            let event = match action.kind {
                ActionKind::Chat(text) => InboundEvent::chat(script.chat_channel.clone(), action.user_id, text, at),
                ActionKind::Vote(choice) => {
                    let mut event = InboundEvent::vote(script.story_channel.clone(), action.user_id, choice, at);
                    if let crate::events::InboundPayload::Vote { day_index, .. } = &mut event.payload {
                        *day_index = Some(day.day_index);
                    }
                    event
                }
            };
            let user = event.user_id.clone();
            engine.apply(event).map_err(|e| {
                SimulationError::Mismatch(format!("day {}: action by {user} rejected: {e}", day.day_index))
            })?;
            applied += 1;
            observe(&engine);
        }

        clock.set(day.closes_at);
        engine.run_due(clock.now())?;
        observe(&engine);
    }

    let last_day = engine.releases().last().map_or(0, |r| r.day_index);
    for agent in &script.agents {
        if let Some(a) = agent.actions.iter().find(|a| a.day > last_day) {
            return Err(SimulationError::Mismatch(format!(
                "{} acts on day {} but the story ends after day {last_day}",
                agent.user_id, a.day
            )));
        }
    }

    let report = SimulationReport {
        path: engine.story().released.clone(),
        releases: engine.releases().to_vec(),
        actions_applied: applied,
        ends_at: clock.now(),
        metrics: compute_metrics(engine.log().entries(), None),
    };
    Ok((engine, report))
}

fn crowd_weights(crowd: &CrowdSpec, ordinal: usize, choices: &[u32]) -> Result<WeightedIndex<f64>, SimulationError> {
    let row = crowd.vote_weights.get(ordinal).or(crowd.vote_weights.last());
    let weights: Vec<f64> = match row {
        Some(row) => choices
            .iter()
            .map(|&c| row.get(c as usize).copied().unwrap_or(0.0))
            .collect(),
        None => vec![1.0; choices.len()],
    };
    WeightedIndex::new(weights)
        .map_err(|e| SimulationError::Mismatch(format!("crowd vote weights for decision day {ordinal}: {e}")))
}

fn crowd_actions(
    crowd: &CrowdSpec,
    rng: &mut ChaCha8Rng,
    day_ms: u64,
    votes: Option<&(WeightedIndex<f64>, &[u32])>,
) -> Vec<Scheduled> {
    let member = |i: u32| UserId::new(format!("{}-{i:04}", crowd.user_prefix));
    let mut out = Vec::new();
    if crowd.size == 0 {
        return out;
    }
    for _ in 0..crowd.chats_per_day {
        let who = rng.random_range(0..crowd.size);
        let line = &crowd.chat_lines[rng.random_range(0..crowd.chat_lines.len())];
        out.push(Scheduled {
            offset_ms: rng.random_range(0..day_ms),
            user_id: member(who),
            kind: ActionKind::Chat(line.clone()),
        });
    }
    if let Some((dist, choices)) = votes {
        for i in 0..crowd.size {
            if rng.random_bool(crowd.turnout) {
                out.push(Scheduled {
                    offset_ms: rng.random_range(0..day_ms),
                    user_id: member(i),
                    kind: ActionKind::Vote(choices[dist.sample(rng)]),
                });
            }
        }
    }
    out
}
