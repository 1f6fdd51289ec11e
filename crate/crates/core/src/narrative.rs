//! Characters, branching story packages and the released-story state.
//!
//! Everything here is an immutable value. Advancing the story returns a new
//! [`StoryState`]; the scheduler is the only owner that swaps it in.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::NodeId;
use crate::voting::Tally;

/// Version written to, and required from, story package files.
pub const PACKAGE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NarrativeError {
    #[error("the story has finished")]
    StoryFinished,
    #[error("a canonized fact must not be empty")]
    EmptyFact,
    #[error("a character needs a name")]
    EmptyName,
    #[error("node `{0}` is not part of the package")]
    UnknownNode(NodeId),
    #[error("unsupported story package schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("malformed story package: {0}")]
    Parse(String),
}

impl NarrativeError {
    pub fn code(&self) -> &'static str {
        match self {
            NarrativeError::StoryFinished => "story-finished",
            NarrativeError::EmptyFact => "empty-fact",
            NarrativeError::EmptyName => "empty-name",
            NarrativeError::UnknownNode(_) => "unknown-node",
            NarrativeError::SchemaVersion { .. } => "schema-version",
            NarrativeError::Parse(_) => "malformed-package",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CharacterDef {
    name: String,
    personality: String,
    worldview: String,
    #[serde(default)]
    canon_facts: Vec<String>,
}

/// The character whose background seeds every language-model prompt.
///
/// `base_prompt` is always re-rendered from the other fields, so it contains
/// the name, the personality and every canon fact verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CharacterDef", into = "CharacterDef")]
pub struct Character {
    name: String,
    personality: String,
    worldview: String,
    canon_facts: Vec<String>,
    base_prompt: String,
}

impl Character {
    /// Duplicate facts are dropped, keeping the first occurrence.
    pub fn new(
        name: impl Into<String>,
        personality: impl Into<String>,
        worldview: impl Into<String>,
        canon_facts: impl IntoIterator<Item = String>,
    ) -> Result<Self, NarrativeError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(NarrativeError::EmptyName);
        }
        let mut seen = HashSet::new();
        let canon_facts = canon_facts.into_iter().filter(|f| seen.insert(f.clone())).collect();
        let mut ch = Character {
            name,
            personality: personality.into(),
            worldview: worldview.into(),
            canon_facts,
            base_prompt: String::new(),
        };
        ch.base_prompt = ch.render_base_prompt();
        Ok(ch)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn personality(&self) -> &str {
        &self.personality
    }

    pub fn worldview(&self) -> &str {
        &self.worldview
    }

    pub fn canon_facts(&self) -> &[String] {
        &self.canon_facts
    }

    pub fn base_prompt(&self) -> &str {
        &self.base_prompt
    }

    fn render_base_prompt(&self) -> String {
        let mut out = format!(
            "I'm {}.\nPersonality: {}\nWorld: {}\n",
            self.name, self.personality, self.worldview
        );
        if !self.canon_facts.is_empty() {
            out.push_str("Facts I know to be true:\n");
            for fact in &self.canon_facts {
                out.push_str("- ");
                out.push_str(fact);
                out.push('\n');
            }
        }
        out
    }
}

impl TryFrom<CharacterDef> for Character {
    type Error = NarrativeError;

    fn try_from(def: CharacterDef) -> Result<Self, Self::Error> {
        Character::new(def.name, def.personality, def.worldview, def.canon_facts)
    }
}

impl From<Character> for CharacterDef {
    fn from(ch: Character) -> Self {
        CharacterDef {
            name: ch.name,
            personality: ch.personality,
            worldview: ch.worldview,
            canon_facts: ch.canon_facts,
        }
    }
}

/// Promotes an improvised detail into the character's canon so that later
/// prompts keep it consistent. Re-canonizing a known fact is a no-op.
pub fn canonize_fact(ch: &Character, fact: &str) -> Result<Character, NarrativeError> {
    let fact = fact.trim();
    if fact.is_empty() {
        return Err(NarrativeError::EmptyFact);
    }
    let mut next = ch.clone();
    if !next.canon_facts.iter().any(|f| f == fact) {
        next.canon_facts.push(fact.to_owned());
        next.base_prompt = next.render_base_prompt();
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub index: u32,
    pub emoji: String,
    pub caption: String,
    pub target: NodeId,
}

impl Choice {
    pub fn new(index: u32, emoji: impl Into<String>, caption: impl Into<String>, target: impl Into<NodeId>) -> Self {
        Choice {
            index,
            emoji: emoji.into(),
            caption: caption.into(),
            target: target.into(),
        }
    }
}

/// One day's post in the story channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryNode {
    /// Filled from the key of the `nodes` map when loading a package.
    #[serde(skip)]
    pub id: NodeId,
    pub day_index: u32,
    pub body: String,
    /// Authored condensation used in the live story prompt instead of `body`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default)]
    pub illustrations: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<Choice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub successor: Option<NodeId>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub terminal: bool,
}

impl StoryNode {
    pub fn is_decision(&self) -> bool {
        !self.choices.is_empty()
    }

    /// The text this node contributes to the live story prompt.
    pub fn prompt_text(&self) -> &str {
        self.summary.as_deref().unwrap_or(&self.body)
    }

    /// Node ids reachable in one step.
    pub fn next_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.choices.iter().map(|c| &c.target).chain(self.successor.iter())
    }
}

impl Default for NodeId {
    fn default() -> Self {
        NodeId::new("")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PackageFile {
    schema_version: u32,
    character: Character,
    #[serde(default)]
    warmup_days: u32,
    start: NodeId,
    nodes: BTreeMap<NodeId, StoryNode>,
}

/// A complete authored story: the character plus the branching node graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PackageFile", into = "PackageFile")]
pub struct StoryPackage {
    pub character: Character,
    pub nodes: BTreeMap<NodeId, StoryNode>,
    pub start: NodeId,
    pub warmup_days: u32,
}

impl TryFrom<PackageFile> for StoryPackage {
    type Error = NarrativeError;

    fn try_from(file: PackageFile) -> Result<Self, Self::Error> {
        if file.schema_version != PACKAGE_SCHEMA_VERSION {
            return Err(NarrativeError::SchemaVersion {
                found: file.schema_version,
                expected: PACKAGE_SCHEMA_VERSION,
            });
        }
        let nodes = file
            .nodes
            .into_iter()
            .map(|(id, mut node)| {
                node.id = id.clone();
                (id, node)
            })
            .collect();
        Ok(StoryPackage {
            character: file.character,
            nodes,
            start: file.start,
            warmup_days: file.warmup_days,
        })
    }
}

impl From<StoryPackage> for PackageFile {
    fn from(pkg: StoryPackage) -> Self {
        PackageFile {
            schema_version: PACKAGE_SCHEMA_VERSION,
            character: pkg.character,
            warmup_days: pkg.warmup_days,
            start: pkg.start,
            nodes: pkg.nodes,
        }
    }
}

impl StoryPackage {
    pub fn from_json(text: &str) -> Result<Self, NarrativeError> {
        serde_json::from_str(text).map_err(|e| NarrativeError::Parse(e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("story packages always serialize")
    }

    pub fn node(&self, id: &NodeId) -> Result<&StoryNode, NarrativeError> {
        self.nodes
            .get(id)
            .ok_or_else(|| NarrativeError::UnknownNode(id.clone()))
    }

    pub fn start_node(&self) -> Result<&StoryNode, NarrativeError> {
        self.node(&self.start)
    }
}

/// Package well-formedness rules, each with a stable kebab-case code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefectRule {
    MissingStart,
    DanglingTarget,
    DanglingSuccessor,
    DuplicateEmoji,
    DuplicateTarget,
    DuplicateChoiceIndex,
    EmptyEmoji,
    TerminalWithChoices,
    TerminalWithSuccessor,
    SuccessorWithChoices,
    MissingSuccessor,
    WarmupWithChoices,
    UnreachableTerminal,
}

impl DefectRule {
    pub fn code(self) -> &'static str {
        match self {
            DefectRule::MissingStart => "missing-start",
            DefectRule::DanglingTarget => "dangling-target",
            DefectRule::DanglingSuccessor => "dangling-successor",
            DefectRule::DuplicateEmoji => "duplicate-emoji",
            DefectRule::DuplicateTarget => "duplicate-target",
            DefectRule::DuplicateChoiceIndex => "duplicate-choice-index",
            DefectRule::EmptyEmoji => "empty-emoji",
            DefectRule::TerminalWithChoices => "terminal-with-choices",
            DefectRule::TerminalWithSuccessor => "terminal-with-successor",
            DefectRule::SuccessorWithChoices => "successor-with-choices",
            DefectRule::MissingSuccessor => "missing-successor",
            DefectRule::WarmupWithChoices => "warmup-with-choices",
            DefectRule::UnreachableTerminal => "unreachable-terminal",
        }
    }
}

impl fmt::Display for DefectRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Defect {
    pub node: NodeId,
    pub rule: DefectRule,
    pub detail: String,
}

impl Defect {
    fn new(node: &NodeId, rule: DefectRule, detail: impl Into<String>) -> Self {
        Defect {
            node: node.clone(),
            rule,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} ({})", self.node, self.rule, self.detail)
    }
}

/// Checks every structural rule of a package. An empty result means the
/// package can be loaded into an engine.
pub fn validate_package(pkg: &StoryPackage) -> Vec<Defect> {
    let mut defects = Vec::new();

    if !pkg.nodes.contains_key(&pkg.start) {
        defects.push(Defect::new(
            &pkg.start,
            DefectRule::MissingStart,
            "start node does not exist",
        ));
    }

    for node in pkg.nodes.values() {
        check_node(pkg, node, &mut defects);
    }

    if pkg.nodes.contains_key(&pkg.start) {
        check_warmup(pkg, &mut defects);
        if !terminal_reachable(pkg) {
            defects.push(Defect::new(
                &pkg.start,
                DefectRule::UnreachableTerminal,
                "no terminal node is reachable from start",
            ));
        }
    }

    defects
}

fn check_node(pkg: &StoryPackage, node: &StoryNode, defects: &mut Vec<Defect>) {
    let id = &node.id;
    let mut emojis = HashSet::new();
    let mut targets = HashSet::new();
    let mut indices = HashSet::new();
    for choice in &node.choices {
        if choice.emoji.trim().is_empty() {
            defects.push(Defect::new(
                id,
                DefectRule::EmptyEmoji,
                format!("choice {}", choice.index),
            ));
        } else if !emojis.insert(choice.emoji.as_str()) {
            defects.push(Defect::new(id, DefectRule::DuplicateEmoji, choice.emoji.clone()));
        }
        if !targets.insert(&choice.target) {
            defects.push(Defect::new(id, DefectRule::DuplicateTarget, choice.target.to_string()));
        }
        if !indices.insert(choice.index) {
            defects.push(Defect::new(
                id,
                DefectRule::DuplicateChoiceIndex,
                choice.index.to_string(),
            ));
        }
        if !pkg.nodes.contains_key(&choice.target) {
            defects.push(Defect::new(id, DefectRule::DanglingTarget, choice.target.to_string()));
        }
    }
    if let Some(successor) = &node.successor {
        if !pkg.nodes.contains_key(successor) {
            defects.push(Defect::new(id, DefectRule::DanglingSuccessor, successor.to_string()));
        }
    }

    if node.terminal {
        if node.is_decision() {
            defects.push(Defect::new(
                id,
                DefectRule::TerminalWithChoices,
                "terminal nodes offer no choices",
            ));
        }
        if node.successor.is_some() {
            defects.push(Defect::new(
                id,
                DefectRule::TerminalWithSuccessor,
                "terminal nodes have no successor",
            ));
        }
    } else if node.is_decision() {
        if node.successor.is_some() {
            defects.push(Defect::new(
                id,
                DefectRule::SuccessorWithChoices,
                "decision nodes branch through choices",
            ));
        }
    } else if node.successor.is_none() {
        defects.push(Defect::new(
            id,
            DefectRule::MissingSuccessor,
            "non-terminal node without choices",
        ));
    }
}

/// Every node within the first `warmup_days` steps of any path from start
/// must be choice-free.
fn check_warmup(pkg: &StoryPackage, defects: &mut Vec<Defect>) {
    if pkg.warmup_days == 0 {
        return;
    }
    let mut flagged = BTreeSet::new();
    let mut seen = HashSet::new();
    let mut queue = VecDeque::from([(&pkg.start, 0u32)]);
    while let Some((id, depth)) = queue.pop_front() {
        if depth >= pkg.warmup_days || !seen.insert((id, depth)) {
            continue;
        }
        let Some(node) = pkg.nodes.get(id) else { continue };
        if node.is_decision() {
            flagged.insert(id);
        }
        for next in node.next_ids() {
            queue.push_back((next, depth + 1));
        }
    }
    for id in flagged {
        defects.push(Defect::new(
            id,
            DefectRule::WarmupWithChoices,
            format!("within the first {} warm-up day(s)", pkg.warmup_days),
        ));
    }
}

fn terminal_reachable(pkg: &StoryPackage) -> bool {
    let mut seen = HashSet::new();
    let mut stack = vec![&pkg.start];
    while let Some(id) = stack.pop() {
        if !seen.insert(id) {
            continue;
        }
        let Some(node) = pkg.nodes.get(id) else { continue };
        if node.terminal {
            return true;
        }
        stack.extend(node.next_ids());
    }
    false
}

/// Picks the node released after `node`'s day closes.
///
/// Decision nodes follow the choice with the most votes; ties go to the
/// lowest choice index and an empty tally counts as all zeros. Warm-up nodes
/// follow their successor regardless of votes.
pub fn resolve_branch(node: &StoryNode, tally: &Tally) -> Result<NodeId, NarrativeError> {
    if node.terminal {
        return Err(NarrativeError::StoryFinished);
    }
    if let Some(best) = node.choices.iter().max_by(|a, b| {
        tally
            .count(a.index)
            .cmp(&tally.count(b.index))
            .then(b.index.cmp(&a.index))
    }) {
        return Ok(best.target.clone());
    }
    node.successor
        .clone()
        .ok_or_else(|| NarrativeError::UnknownNode(node.id.clone()))
}

/// The story released so far.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryState {
    pub released: Vec<NodeId>,
    pub current: NodeId,
    pub live_story_prompt: String,
}

impl StoryState {
    /// State right after the start node is published.
    pub fn begin(pkg: &StoryPackage) -> Result<Self, NarrativeError> {
        let start = pkg.start_node()?;
        Ok(StoryState {
            released: vec![start.id.clone()],
            current: start.id.clone(),
            live_story_prompt: story_segment(start),
        })
    }
}

fn story_segment(node: &StoryNode) -> String {
    format!("[Day {}]\n{}\n", node.day_index, node.prompt_text())
}

/// Releases the node chosen by [`resolve_branch`] for the current node.
pub fn advance_story(state: &StoryState, pkg: &StoryPackage, tally: &Tally) -> Result<StoryState, NarrativeError> {
    let current = pkg.node(&state.current)?;
    let next_id = resolve_branch(current, tally)?;
    let next = pkg.node(&next_id)?;
    let mut released = state.released.clone();
    released.push(next_id.clone());
    let mut live_story_prompt = state.live_story_prompt.clone();
    live_story_prompt.push('\n');
    live_story_prompt.push_str(&story_segment(next));
    Ok(StoryState {
        released,
        current: next_id,
        live_story_prompt,
    })
}
