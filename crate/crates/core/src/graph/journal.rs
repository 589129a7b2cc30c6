//! Durable storage for the event log and snapshots.
//!
//! On-disk layout of a data directory:
//! `snapshot.json` (latest snapshot) and `events.log` (records after it).

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use compact_str::CompactString;
use serde::Serialize;
use serde_json::Value;

use super::{parse_log, recover, EdgeId, EventRecord, Graph, NodeId, Snapshot};
use crate::error::{Error, Result};

pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const LOG_FILE: &str = "events.log";
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 10_000;

enum Sink {
    Null,
    Memory(Vec<EventRecord>),
    Dir { dir: PathBuf, log: BufWriter<File>, frags: Fragments },
}

/// Serialized snapshot entries in id order, kept across snapshots. Each
/// snapshot re-serializes only the ids named by mutations logged since the
/// previous one. Edges dropped along with a removed node are caught by a
/// length check and pruned.
#[derive(Default)]
struct Fragments {
    warm: bool,
    nodes: BTreeMap<CompactString, Box<str>>,
    edges: BTreeMap<CompactString, Box<str>>,
    dirty_nodes: HashSet<CompactString>,
    dirty_edges: HashSet<CompactString>,
}

fn fragment(item: &impl Serialize) -> Result<Box<str>> {
    Ok(serde_json::to_string(item).map_err(|e| Error::Io(e.into()))?.into_boxed_str())
}

fn emit(frags: &BTreeMap<CompactString, Box<str>>, out: &mut impl Write) -> Result<()> {
    for (i, frag) in frags.values().enumerate() {
        if i > 0 {
            out.write_all(b",")?;
        }
        out.write_all(frag.as_bytes())?;
    }
    Ok(())
}

impl Fragments {
    fn forget(&mut self, rec: &EventRecord) {
        if !self.warm {
            return;
        }
        let Some(list) = rec.payload.get("mutations").and_then(Value::as_array) else { return };
        for m in list {
            let (Some(kind), Some(id)) = (m.get("type").and_then(Value::as_str), m.get("id").and_then(Value::as_str)) else {
                continue;
            };
            if kind.contains("edge") {
                self.dirty_edges.insert(id.into());
            } else {
                self.dirty_nodes.insert(id.into());
            }
        }
    }

    fn refresh(&mut self, graph: &Graph) -> Result<()> {
        if !self.warm {
            self.nodes = graph.nodes.values().map(|n| Ok((n.id.0.clone(), fragment(n)?))).collect::<Result<_>>()?;
            self.edges = graph.edges.values().map(|e| Ok((e.id.0.clone(), fragment(e)?))).collect::<Result<_>>()?;
            self.warm = true;
            return Ok(());
        }
        for id in std::mem::take(&mut self.dirty_nodes) {
            match graph.nodes.get(&NodeId(id.clone())) {
                Some(n) => self.nodes.insert(id, fragment(n)?),
                None => self.nodes.remove(&id),
            };
        }
        for id in std::mem::take(&mut self.dirty_edges) {
            match graph.edges.get(&EdgeId(id.clone())) {
                Some(e) => self.edges.insert(id, fragment(e)?),
                None => self.edges.remove(&id),
            };
        }
        if self.nodes.len() != graph.nodes.len() {
            self.nodes.retain(|id, _| graph.nodes.contains_key(&NodeId(id.clone())));
        }
        if self.edges.len() != graph.edges.len() {
            self.edges.retain(|id, _| graph.edges.contains_key(&EdgeId(id.clone())));
        }
        Ok(())
    }

    /// Writes the same bytes as `graph.snapshot().to_json()`.
    fn write(&mut self, graph: &Graph, out: &mut impl Write) -> Result<()> {
        if let Err(e) = self.refresh(graph) {
            *self = Fragments::default();
            return Err(e);
        }
        write!(out, "{{\"seq\":{},\"nodes\":[", graph.seq())?;
        emit(&self.nodes, out)?;
        out.write_all(b"],\"edges\":[")?;
        emit(&self.edges, out)?;
        out.write_all(b"]}")?;
        Ok(())
    }
}

pub struct Journal {
    sink: Sink,
    snapshot_every: u64,
    since_snapshot: u64,
}

impl Journal {
    /// Discards records. Used for scratch copies such as dry runs.
    pub fn null() -> Self {
        Journal { sink: Sink::Null, snapshot_every: 0, since_snapshot: 0 }
    }

    /// Keeps every record in memory.
    pub fn memory() -> Self {
        Journal { sink: Sink::Memory(Vec::new()), snapshot_every: 0, since_snapshot: 0 }
    }

    /// Opens (or creates) a data directory and recovers its graph. Returns
    /// the records replayed after the snapshot alongside the graph.
    pub fn open_dir(dir: &Path) -> Result<(Graph, Journal, Vec<EventRecord>)> {
        fs::create_dir_all(dir)?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let snapshot = if snap_path.exists() {
            Snapshot::from_json(&fs::read_to_string(&snap_path)?)?
        } else {
            Snapshot::empty()
        };
        let log_path = dir.join(LOG_FILE);
        let mut tail = if log_path.exists() {
            parse_log(BufReader::new(File::open(&log_path)?))?
        } else {
            Vec::new()
        };
        // A crash between snapshot rename and log truncation leaves records
        // the snapshot already covers.
        let high = snapshot.seq;
        tail.retain(|r| r.seq > high);
        let graph = recover(snapshot, &tail)?;
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        let journal = Journal {
            sink: Sink::Dir { dir: dir.to_path_buf(), log: BufWriter::new(log), frags: Fragments::default() },
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            since_snapshot: tail.len() as u64,
        };
        Ok((graph, journal, tail))
    }

    pub fn set_snapshot_every(&mut self, every: u64) {
        self.snapshot_every = every;
    }

    pub fn dir(&self) -> Option<&Path> {
        match &self.sink {
            Sink::Dir { dir, .. } => Some(dir),
            _ => None,
        }
    }

    /// In-memory records, when this journal keeps them.
    pub fn records(&self) -> Option<&[EventRecord]> {
        match &self.sink {
            Sink::Memory(v) => Some(v),
            _ => None,
        }
    }

    pub fn append(&mut self, rec: &EventRecord) -> Result<()> {
        match &mut self.sink {
            Sink::Null => {}
            Sink::Memory(v) => v.push(rec.clone()),
            Sink::Dir { log, frags, .. } => {
                frags.forget(rec);
                log.write_all(rec.to_line().as_bytes())?;
                log.write_all(b"\n")?;
                log.flush()?;
            }
        }
        self.since_snapshot += 1;
        Ok(())
    }

    pub fn wants_snapshot(&self) -> bool {
        self.dir().is_some() && self.snapshot_every > 0 && self.since_snapshot >= self.snapshot_every
    }

    /// Writes a snapshot atomically and truncates the log it supersedes.
    pub fn write_snapshot(&mut self, graph: &Graph) -> Result<()> {
        if let Sink::Dir { dir, log, frags } = &mut self.sink {
            log.flush()?;
            let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
            let mut out = BufWriter::with_capacity(1 << 20, File::create(&tmp)?);
            frags.write(graph, &mut out)?;
            out.flush()?;
            drop(out);
            fs::rename(&tmp, dir.join(SNAPSHOT_FILE))?;
            let fresh = OpenOptions::new()
                .create(true)
                .write(true)
                .truncate(true)
                .open(dir.join(LOG_FILE))?;
            *log = BufWriter::new(fresh);
        }
        self.since_snapshot = 0;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Sink::Dir { log, .. } = &mut self.sink {
            log.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::parse_ts;
    use crate::graph::{Attrs, EdgeLabel, Mutation, NodeKind};

    #[test]
    fn reopen_replays_snapshot_and_tail() {
        let dir = tempfile::tempdir().unwrap();
        let now = parse_ts("2024-01-01T00:00:00Z").unwrap();
        let (mut g, mut j, tail) = Journal::open_dir(dir.path()).unwrap();
        assert!(tail.is_empty());
        j.set_snapshot_every(3);
        for _ in 0..5 {
            let id = g.batch(now).node_id();
            let rec = g
                .apply_mutation(Mutation::AddNode { id, kind: NodeKind::File, attrs: Attrs::new() }, now)
                .unwrap();
            j.append(&rec).unwrap();
            if j.wants_snapshot() {
                j.write_snapshot(&g).unwrap();
            }
        }
        drop(j);
        let (g2, _, tail) = Journal::open_dir(dir.path()).unwrap();
        assert_eq!(tail.len(), 2);
        assert_eq!(g2.snapshot(), g.snapshot());
    }

    #[test]
    fn cached_fragments_write_the_same_bytes_as_a_fresh_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let now = parse_ts("2024-01-01T00:00:00Z").unwrap();
        let (mut g, mut j, _) = Journal::open_dir(dir.path()).unwrap();
        let mut nodes = Vec::new();
        for round in 0..4 {
            for i in 0..6 {
                let id = g.batch(now).node_id();
                let attrs = Attrs::new().with("name", format!("n{round}-{i}"));
                j.append(&g.apply_mutation(Mutation::AddNode { id: id.clone(), kind: NodeKind::Note, attrs }, now).unwrap()).unwrap();
                nodes.push(id);
            }
            let (a, b) = (nodes[round].clone(), nodes[round + 1].clone());
            let id = g.batch(now).edge_id();
            let edge = Mutation::AddEdge { id, src: a.clone(), label: EdgeLabel::HasSubContext, dst: b, attrs: Attrs::new() };
            j.append(&g.apply_mutation(edge, now).unwrap()).unwrap();
            let touch = Mutation::SetNodeAttrs { id: a, set: Attrs::new().with("round", round as i64), unset: vec![] };
            j.append(&g.apply_mutation(touch, now).unwrap()).unwrap();
            if round == 2 {
                j.append(&g.apply_mutation(Mutation::RemoveNode { id: nodes[1].clone() }, now).unwrap()).unwrap();
            }
            j.write_snapshot(&g).unwrap();
            let written = fs::read_to_string(dir.path().join(SNAPSHOT_FILE)).unwrap();
            assert_eq!(written, g.snapshot().to_json(), "round {round}");
        }
    }
}
