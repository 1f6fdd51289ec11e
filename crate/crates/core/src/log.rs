//! Append-only event log, one JSON record per line.
//!
//! The first line is a header carrying the log schema version. Every later
//! line is `{"ts": .., "kind": .., ...}` with non-decreasing `ts`. With
//! [`Durability::Sync`] a record is fsynced before `append` returns; with
//! [`Durability::Flush`] it is handed to the OS, which survives a process
//! crash but not a power cut.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{InboundEvent, OutboundPost};
use crate::ids::NodeId;
use crate::scheduler::ReleaseEvent;
use crate::time::Timestamp;

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("event at {got} is older than the last logged event at {last}")]
    NonMonotonic { last: Timestamp, got: Timestamp },
    #[error("log schema version {found} is not supported (expected {expected})")]
    Incompatible { found: u32, expected: u32 },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("log file {0} already exists")]
    Exists(PathBuf),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl LogError {
    pub fn code(&self) -> &'static str {
        match self {
            LogError::NonMonotonic { .. } => "non-monotonic-event",
            LogError::Incompatible { .. } => "incompatible-log",
            LogError::Malformed { .. } => "malformed-log",
            LogError::Exists(_) => "log-exists",
            LogError::Io(_) => "io",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogHeader {
    kind: HeaderTag,
    pub schema_version: u32,
    pub character: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum HeaderTag {
    Header,
}

impl LogHeader {
    pub fn new(character: impl Into<String>) -> Self {
        LogHeader {
            kind: HeaderTag::Header,
            schema_version: LOG_SCHEMA_VERSION,
            character: character.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    /// The start node went live when the engine started.
    StoryOpen {
        day_index: u32,
        node: NodeId,
        post: OutboundPost,
    },
    /// An accepted inbound event.
    Inbound { event: InboundEvent },
    /// A day closed and the next node was published.
    StoryRelease { release: ReleaseEvent, post: OutboundPost },
    /// Any other published post (chat replies, tally updates, notices).
    Outbound {
        post: OutboundPost,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        trace_id: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub ts: Timestamp,
    #[serde(flatten)]
    pub record: LogRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Durability {
    /// Write each record to the OS before acknowledging it.
    Flush,
    /// Also fsync each record.
    #[default]
    Sync,
}

#[derive(Debug)]
pub struct EventLog {
    header: LogHeader,
    entries: Vec<LogEntry>,
    file: Option<File>,
    durability: Durability,
}

impl EventLog {
    pub fn in_memory(header: LogHeader) -> Self {
        EventLog {
            header,
            entries: Vec::new(),
            file: None,
            durability: Durability::Flush,
        }
    }

    /// Creates a new log file. Refuses to overwrite an existing one.
    pub fn create(path: &Path, header: LogHeader, durability: Durability) -> Result<Self, LogError> {
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
            .map_err(|e| match e.kind() {
                io::ErrorKind::AlreadyExists => LogError::Exists(path.to_owned()),
                _ => LogError::Io(e),
            })?;
        let mut line = serde_json::to_string(&header).map_err(io::Error::other)?;
        line.push('\n');
        file.write_all(line.as_bytes())?;
        if durability == Durability::Sync {
            file.sync_all()?;
        }
        Ok(EventLog {
            header,
            entries: Vec::new(),
            file: Some(file),
            durability,
        })
    }

    /// Opens an existing log for further appends. A torn final line left by
    /// a crash mid-write is cut off.
    pub fn open(path: &Path, durability: Durability) -> Result<Self, LogError> {
        let text = std::fs::read_to_string(path)?;
        let parsed = parse_log_lenient(&text)?;
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(parsed.valid_len as u64)?;
        let mut file = OpenOptions::new().append(true).open(path)?;
        file.flush()?;
        Ok(EventLog {
            header: parsed.header,
            entries: parsed.entries,
            file: Some(file),
            durability,
        })
    }

    pub fn header(&self) -> &LogHeader {
        &self.header
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_ts(&self) -> Option<Timestamp> {
        self.entries.last().map(|e| e.ts)
    }

    pub fn check_monotonic(&self, ts: Timestamp) -> Result<(), LogError> {
        match self.last_ts() {
            Some(last) if ts < last => Err(LogError::NonMonotonic { last, got: ts }),
            _ => Ok(()),
        }
    }

    /// Appends one record. It is on disk (per the durability mode) when
    /// this returns `Ok`.
    pub fn append(&mut self, ts: Timestamp, record: LogRecord) -> Result<(), LogError> {
        self.check_monotonic(ts)?;
        let entry = LogEntry { ts, record };
        if let Some(file) = &mut self.file {
            let mut line = serde_json::to_string(&entry).map_err(io::Error::other)?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            if self.durability == Durability::Sync {
                file.sync_data()?;
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn sync(&mut self) -> Result<(), LogError> {
        if let Some(file) = &mut self.file {
            file.flush()?;
            file.sync_all()?;
        }
        Ok(())
    }
}

struct ParsedLog {
    header: LogHeader,
    entries: Vec<LogEntry>,
    valid_len: usize,
}

fn parse_log_lenient(text: &str) -> Result<ParsedLog, LogError> {
    let mut lines = Vec::new();
    let mut offset = 0;
    for piece in text.split_inclusive('\n') {
        lines.push((offset, piece));
        offset += piece.len();
    }
    // An unterminated last line is an interrupted write.
    let mut valid_len = text.len();
    if let Some(&(start, last)) = lines.last() {
        if !last.ends_with('\n') {
            valid_len = start;
            lines.pop();
        }
    }

    let mut iter = lines.into_iter().enumerate();
    let header = match iter.next() {
        Some((_, (_, line))) => parse_header(line)?,
        None => {
            return Err(LogError::Malformed {
                line: 1,
                message: "missing header".into(),
            })
        }
    };

    let mut entries: Vec<LogEntry> = Vec::new();
    for (i, (_, line)) in iter {
        if line.trim().is_empty() {
            continue;
        }
        let entry: LogEntry = serde_json::from_str(line).map_err(|e| LogError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Some(prev) = entries.last() {
            if entry.ts < prev.ts {
                return Err(LogError::NonMonotonic {
                    last: prev.ts,
                    got: entry.ts,
                });
            }
        }
        entries.push(entry);
    }
    Ok(ParsedLog {
        header,
        entries,
        valid_len,
    })
}

fn parse_header(line: &str) -> Result<LogHeader, LogError> {
    #[derive(Deserialize)]
    struct VersionProbe {
        schema_version: Option<u32>,
    }
    let probe: VersionProbe = serde_json::from_str(line).map_err(|e| LogError::Malformed {
        line: 1,
        message: e.to_string(),
    })?;
    match probe.schema_version {
        Some(LOG_SCHEMA_VERSION) => {}
        Some(found) => {
            return Err(LogError::Incompatible {
                found,
                expected: LOG_SCHEMA_VERSION,
            })
        }
        None => {
            return Err(LogError::Malformed {
                line: 1,
                message: "header has no schema_version".into(),
            })
        }
    }
    serde_json::from_str(line).map_err(|e| LogError::Malformed {
        line: 1,
        message: e.to_string(),
    })
}

/// Parses a complete log document.
pub fn parse_log(text: &str) -> Result<(LogHeader, Vec<LogEntry>), LogError> {
    let parsed = parse_log_lenient(text)?;
    Ok((parsed.header, parsed.entries))
}

pub fn read_log(path: &Path) -> Result<(LogHeader, Vec<LogEntry>), LogError> {
    parse_log(&std::fs::read_to_string(path)?)
}
