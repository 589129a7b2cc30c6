use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Edge, Graph, Mutation, Node};
use crate::clock::Timestamp;
use crate::error::{Error, Result};

/// One line of the event log: `{"seq","ts","op","payload"}`. The payload
/// holds the commit's primitive mutations plus operation metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub ts: Timestamp,
    pub op: String,
    pub payload: Value,
}

impl EventRecord {
    pub(crate) fn new(seq: u64, ts: Timestamp, op: &str, mutations: Vec<Mutation>, meta: Value) -> Self {
        let payload = if meta.is_null() {
            json!({ "mutations": mutations })
        } else {
            json!({ "mutations": mutations, "meta": meta })
        };
        EventRecord { seq, ts, op: op.to_string(), payload }
    }

    pub fn mutations(&self) -> Result<Vec<Mutation>> {
        let list = self.payload.get("mutations").cloned().unwrap_or(Value::Array(vec![]));
        serde_json::from_value(list).map_err(|e| Error::CorruptRecord {
            line: self.seq as usize,
            reason: e.to_string(),
        })
    }

    pub fn meta(&self) -> &Value {
        self.payload.get("meta").unwrap_or(&Value::Null)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Full graph state at a seq high-water mark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl Snapshot {
    pub fn empty() -> Self {
        Snapshot { seq: 0, nodes: Vec::new(), edges: Vec::new() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Snapshot> {
        serde_json::from_str(text).map_err(|e| Error::CorruptRecord { line: 0, reason: e.to_string() })
    }
}

/// Rebuilds a graph from a snapshot and the records that follow it. The log
/// must continue the snapshot's seq without gaps.
pub fn recover(snapshot: Snapshot, log: &[EventRecord]) -> Result<Graph> {
    let mut g = Graph::from_snapshot(snapshot)?;
    for rec in log {
        g.replay(rec)?;
    }
    Ok(g)
}

/// Parses a newline-delimited log. Blank lines are ignored; anything else
/// that does not parse is a corrupt record.
pub fn parse_log<R: BufRead>(reader: R) -> Result<Vec<EventRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EventRecord = serde_json::from_str(&line).map_err(|e| Error::CorruptRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}
