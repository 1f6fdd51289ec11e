#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use storybot_core::events::InboundPayload;
use storybot_core::log::{LogEntry, LogRecord};
use storybot_core::narrative::StoryPackage;
use storybot_core::simulation::SimulationScript;
use storybot_core::NodeId;

pub fn example(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn package(name: &str) -> Arc<StoryPackage> {
    let text = std::fs::read_to_string(example(name)).unwrap();
    Arc::new(StoryPackage::from_json(&text).unwrap())
}

pub fn script(name: &str) -> SimulationScript {
    SimulationScript::from_json(&std::fs::read_to_string(example(name)).unwrap()).unwrap()
}

/// Walks the package by hand from the recorded votes: last vote per user
/// per day, most votes wins, ties to the lower choice index.
pub fn oracle_path(pkg: &StoryPackage, entries: &[LogEntry]) -> Vec<NodeId> {
    let mut last_vote: BTreeMap<u32, BTreeMap<String, u32>> = BTreeMap::new();
    for entry in entries {
        if let LogRecord::Inbound { event } = &entry.record {
            if let InboundPayload::Vote {
                choice_index,
                day_index,
            } = event.payload
            {
                let day = day_index.expect("simulated votes name their day");
                last_vote
                    .entry(day)
                    .or_default()
                    .insert(event.user_id.as_str().to_owned(), choice_index);
            }
        }
    }

    let mut path = vec![pkg.start.clone()];
    let mut day = 0u32;
    loop {
        let node = &pkg.nodes[path.last().unwrap()];
        if node.terminal {
            return path;
        }
        let next = if node.choices.is_empty() {
            node.successor.clone().unwrap()
        } else {
            let mut counts = vec![0u64; node.choices.len()];
            for &choice in last_vote.get(&day).map(|m| m.values()).into_iter().flatten() {
                let pos = node.choices.iter().position(|c| c.index == choice).unwrap();
                counts[pos] += 1;
            }
            let mut best = 0;
            for i in 1..counts.len() {
                if counts[i] > counts[best]
                    || (counts[i] == counts[best] && node.choices[i].index < node.choices[best].index)
                {
                    best = i;
                }
            }
            node.choices[best].target.clone()
        };
        path.push(next);
        day += 1;
    }
}

pub fn release_count(entries: &[LogEntry]) -> usize {
    entries
        .iter()
        .filter(|e| matches!(e.record, LogRecord::StoryRelease { .. }))
        .count()
}
