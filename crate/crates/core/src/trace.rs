//! Simulation events and their trace-file form.
//!
//! One line per event, tab-separated: tick, event kind, subject node(s)
//! (comma-separated, `-` when none), payload. The payload is a compact JSON
//! object so a trace can be replayed without the scenario that produced it.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::injection::InjectionCause;
use crate::node::Role;
use crate::paradigm::Outcome;
use crate::quiz::JokerKind;
use crate::resource::{NodeId, Resource, ResourceId, Tick, Topic};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvictCause {
    Ttl,
    Cascade,
    Superseded,
}

impl fmt::Display for EvictCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EvictCause::Ttl => "ttl",
            EvictCause::Cascade => "cascade",
            EvictCause::Superseded => "superseded",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeadlockState {
    Detected,
    Resolved,
}

/// Event payloads. The variant name is the event kind written to the trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EventData {
    Setup {
        seed: u64,
        ticks: Tick,
        sample_every: Tick,
    },
    NodeJoin {
        role: Role,
        interests: BTreeSet<Topic>,
        backbone: bool,
        budget: f64,
    },
    /// A resource registered with the backbone repository.
    Catalog {
        resource: Resource,
        topics: BTreeSet<Topic>,
    },
    Move {
        x: f64,
        y: f64,
    },
    Contact {
        edges: Vec<(NodeId, NodeId)>,
    },
    /// Subjects: staff node, then attendees. Every subject receives the
    /// listed resources.
    LectureRelease {
        resources: Vec<ResourceId>,
    },
    Author {
        resource: Resource,
        topics: BTreeSet<Topic>,
    },
    /// Subjects: the two nodes in contact.
    Digest {
        to_a: usize,
        to_b: usize,
        units: u64,
    },
    /// Subjects: sender, receiver.
    Exchange {
        resource: ResourceId,
        size: u32,
    },
    Deadlock {
        resource: ResourceId,
        state: DeadlockState,
    },
    Injection {
        cause: InjectionCause,
        units: u64,
        cost: f64,
        resources: Vec<ResourceId>,
    },
    Evict {
        resource: ResourceId,
        cause: EvictCause,
    },
    Training {
        course: ResourceId,
        asked: usize,
        right: usize,
        truncated: bool,
    },
    QuizAnswer {
        question: ResourceId,
        outcome: Outcome,
        points: u64,
    },
    JokerUse {
        question: ResourceId,
        joker: JokerKind,
        hint_items: usize,
    },
    QuizDeadline {
        players: usize,
    },
    StatusReport {
        knowledge_points: u64,
        cooperation_points: f64,
    },
    Ranking {
        rank: usize,
        knowledge_points: u64,
        cooperation_points: f64,
        total: u64,
    },
}

impl EventData {
    pub fn kind(&self) -> &'static str {
        match self {
            EventData::Setup { .. } => "Setup",
            EventData::NodeJoin { .. } => "NodeJoin",
            EventData::Catalog { .. } => "Catalog",
            EventData::Move { .. } => "Move",
            EventData::Contact { .. } => "Contact",
            EventData::LectureRelease { .. } => "LectureRelease",
            EventData::Author { .. } => "Author",
            EventData::Digest { .. } => "Digest",
            EventData::Exchange { .. } => "Exchange",
            EventData::Deadlock { .. } => "Deadlock",
            EventData::Injection { .. } => "Injection",
            EventData::Evict { .. } => "Evict",
            EventData::Training { .. } => "Training",
            EventData::QuizAnswer { .. } => "QuizAnswer",
            EventData::JokerUse { .. } => "JokerUse",
            EventData::QuizDeadline { .. } => "QuizDeadline",
            EventData::StatusReport { .. } => "StatusReport",
            EventData::Ranking { .. } => "Ranking",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimEvent {
    pub time: Tick,
    pub subjects: Vec<NodeId>,
    pub data: EventData,
}

impl SimEvent {
    pub fn new(time: Tick, subjects: Vec<NodeId>, data: EventData) -> Self {
        SimEvent {
            time,
            subjects,
            data,
        }
    }

    pub fn kind(&self) -> &'static str {
        self.data.kind()
    }

    pub fn to_line(&self) -> String {
        let subjects = if self.subjects.is_empty() {
            "-".to_owned()
        } else {
            self.subjects
                .iter()
                .map(NodeId::as_str)
                .collect::<Vec<_>>()
                .join(",")
        };
        let value = serde_json::to_value(&self.data).expect("event data serializes");
        let payload = match value {
            serde_json::Value::Object(mut map) => map
                .remove(self.kind())
                .expect("externally tagged variant"),
            other => other,
        };
        format!("{}\t{}\t{}\t{}", self.time, self.kind(), subjects, payload)
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let mut fields = line.splitn(4, '\t');
        let (Some(time), Some(kind), Some(subjects), Some(payload)) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err("expected 4 tab-separated fields".to_owned());
        };
        let time: Tick = time.parse().map_err(|_| format!("bad tick `{time}`"))?;
        let subjects = if subjects == "-" {
            Vec::new()
        } else {
            subjects.split(',').map(NodeId::from).collect()
        };
        let payload: serde_json::Value =
            serde_json::from_str(payload).map_err(|e| format!("bad payload: {e}"))?;
        let tagged = serde_json::json!({ kind: payload });
        let data: EventData =
            serde_json::from_value(tagged).map_err(|e| format!("bad {kind} event: {e}"))?;
        Ok(SimEvent {
            time,
            subjects,
            data,
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("trace truncated or corrupt at line {line}: {reason}")]
    TruncatedTrace { line: usize, reason: String },
    #[error("trace goes back in time at line {line}")]
    OutOfOrder { line: usize },
}

/// Renders a whole trace, one event per line.
pub fn write_trace(events: &[SimEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_line());
        out.push('\n');
    }
    out
}

/// Parses a trace; empty lines are skipped. Line numbers are 1-based.
pub fn parse_trace(text: &str) -> Result<Vec<SimEvent>, TraceError> {
    let mut events = Vec::new();
    let mut last = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ev = SimEvent::parse_line(line).map_err(|reason| TraceError::TruncatedTrace {
            line: i + 1,
            reason,
        })?;
        if ev.time < last {
            return Err(TraceError::OutOfOrder { line: i + 1 });
        }
        last = ev.time;
        events.push(ev);
    }
    Ok(events)
}
