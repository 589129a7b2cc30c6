//! The engine: one graph, its derived indices, and the single-writer commit
//! pipeline every mutating operation goes through.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::blobs::Blobs;
use crate::clock::Timestamp;
use crate::error::{Error, Result};
use crate::events::{ApiEvent, EventHub};
use crate::forgetting::ForgettingPolicy;
use crate::graph::journal::Journal;
use crate::graph::{Batch, EdgeLabel, EventRecord, Graph, Node, NodeId, NodeKind};
use crate::inference::{AccessEvent, ApplyMode, Proposal};
use crate::views::ViewCache;

/// Attribute keys of the stored schema.
pub mod keys {
    pub const NAME: &str = "name";
    pub const STATE: &str = "state";
    pub const CREATED_AT: &str = "created_at";
    pub const MODIFIED_AT: &str = "modified_at";
    pub const LAST_CURRENT_AT: &str = "last_current_at";
    pub const CURRENT_SINCE: &str = "current_since";
    pub const STRENGTH: &str = "strength";
    pub const ORIGIN: &str = "origin";
    pub const LAST_ACCESS_AT: &str = "last_access_at";
    pub const MEASURE: &str = "measure";
    pub const PINNED: &str = "pinned";
    pub const CONTENT_REF: &str = "content_ref";
    pub const SIZE: &str = "size";
    pub const URI: &str = "uri";
    pub const TEXT: &str = "text";
    pub const ARCHIVED: &str = "archived";
    pub const MESSAGE_ID: &str = "message_id";
    pub const IN_REPLY_TO: &str = "in_reply_to";
    pub const REFERENCES: &str = "references";
    pub const FROM: &str = "from";
    pub const TO: &str = "to";
    pub const SUBJECT: &str = "subject";
    pub const DATE: &str = "date";
    pub const DATE_RAW: &str = "date_raw";
    pub const START: &str = "start";
    pub const END: &str = "end";
    pub const SUMMARY: &str = "summary";
    pub const UID: &str = "uid";
    pub const EMAILS: &str = "emails";
    pub const TELS: &str = "tels";
    pub const CTX: &str = "ctx";
    pub const REMOVED: &str = "removed";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub reply_mode: ApplyMode,
    pub coaccess_mode: ApplyMode,
    pub coaccess_window_minutes: u32,
    pub coaccess_min_count: u32,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            reply_mode: ApplyMode::Auto,
            coaccess_mode: ApplyMode::Suggest,
            coaccess_window_minutes: 60,
            coaccess_min_count: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskConfig {
    pub policy: ForgettingPolicy,
    pub inference: InferenceConfig,
}

/// State that lives beside the graph and is persisted as a sidecar at
/// snapshot time, then brought forward from the log tail on open.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub(crate) struct AuxState {
    pub seq: u64,
    pub proposals: BTreeMap<String, Proposal>,
    pub access: Vec<AccessEvent>,
}

const AUX_FILE: &str = "aux.json";
const ACCESS_LOG_CAP: usize = 100_000;

pub struct Desk {
    pub(crate) graph: Graph,
    pub(crate) proposals: BTreeMap<String, Proposal>,
    pub(crate) access: Mutex<Vec<AccessEvent>>,
    pub(crate) message_ids: HashMap<String, NodeId>,
    pub(crate) current: Option<NodeId>,
    /// Live (non-archived) items per content hash.
    pub(crate) blob_refs: HashMap<String, u32>,
    pub(crate) blobs: Blobs,
    pub(crate) config: DeskConfig,
    pub(crate) views: ViewCache,
    journal: Journal,
    hub: Arc<EventHub>,
    pending_extra: Mutex<Option<Value>>,
}

impl Desk {
    pub fn in_memory(config: DeskConfig) -> Result<Desk> {
        config.policy.validate()?;
        Ok(Desk::assemble(Graph::new(), Journal::memory(), Blobs::memory(), config))
    }

    /// Opens a data directory: snapshot + log, archive index, aux sidecar.
    pub fn open(dir: &Path, config: DeskConfig) -> Result<Desk> {
        config.policy.validate()?;
        let (graph, journal, tail) = Journal::open_dir(dir)?;
        let blobs = Blobs::open(dir)?;
        let mut desk = Desk::assemble(graph, journal, blobs, config);
        let aux_path = dir.join(AUX_FILE);
        let snap_seq = desk.graph.seq() - tail.len() as u64;
        if aux_path.exists() {
            let aux: AuxState = serde_json::from_str(&fs::read_to_string(aux_path)?)
                .map_err(|e| Error::CorruptRecord { line: 0, reason: e.to_string() })?;
            if aux.seq == snap_seq {
                desk.proposals = aux.proposals;
                desk.access = Mutex::new(aux.access);
            }
        }
        for rec in &tail {
            desk.absorb_aux(rec);
        }
        Ok(desk)
    }

    /// Rebuilds a desk from an already recovered graph (no durable journal).
    pub fn from_graph(graph: Graph, config: DeskConfig) -> Result<Desk> {
        config.policy.validate()?;
        Ok(Desk::assemble(graph, Journal::memory(), Blobs::memory(), config))
    }

    fn assemble(graph: Graph, journal: Journal, blobs: Blobs, config: DeskConfig) -> Desk {
        let mut desk = Desk {
            graph,
            proposals: BTreeMap::new(),
            access: Mutex::new(Vec::new()),
            message_ids: HashMap::new(),
            current: None,
            blob_refs: HashMap::new(),
            blobs,
            config,
            views: ViewCache::default(),
            journal,
            hub: Arc::new(EventHub::new()),
            pending_extra: Mutex::new(None),
        };
        desk.rebuild_indices();
        desk
    }

    fn rebuild_indices(&mut self) {
        self.message_ids.clear();
        self.blob_refs.clear();
        self.current = None;
        for id in self.graph.ids_of_kind(NodeKind::Context) {
            if self.graph.node(id).is_some_and(|n| n.attrs.get(keys::CURRENT_SINCE).is_some()) {
                self.current = Some(id.clone());
            }
        }
        for id in self.graph.ids_of_kind(NodeKind::Mail) {
            if let Some(mid) = self.graph.node(id).and_then(|n| n.attrs.str(keys::MESSAGE_ID)) {
                self.message_ids.insert(mid.to_string(), id.clone());
            }
        }
        for n in self.graph.nodes() {
            if let Some(h) = live_content_ref(n) {
                *self.blob_refs.entry(h.to_string()).or_default() += 1;
            }
        }
    }

    fn absorb_aux(&mut self, rec: &EventRecord) {
        let meta = rec.meta();
        if let Some(p) = meta.get("proposal") {
            if let Ok(p) = serde_json::from_value::<Proposal>(p.clone()) {
                self.proposals.insert(p.id.clone(), p);
            }
        }
        if let Some(acc) = meta.get("access") {
            if let Ok(a) = serde_json::from_value::<AccessEvent>(acc.clone()) {
                self.push_access(a);
            }
        }
    }

    /// A detached copy for dry runs: same state, no journal, no subscribers,
    /// no disk.
    pub fn scratch(&self) -> Desk {
        Desk {
            graph: self.graph.clone(),
            proposals: self.proposals.clone(),
            access: Mutex::new(self.access.lock().clone()),
            message_ids: self.message_ids.clone(),
            current: self.current.clone(),
            blob_refs: self.blob_refs.clone(),
            blobs: self.blobs.scratch(),
            config: self.config.clone(),
            views: ViewCache::default(),
            journal: Journal::null(),
            hub: Arc::new(EventHub::new()),
            pending_extra: Mutex::new(None),
        }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn seq(&self) -> u64 {
        self.graph.seq()
    }

    pub fn config(&self) -> &DeskConfig {
        &self.config
    }

    pub fn policy(&self) -> &ForgettingPolicy {
        &self.config.policy
    }

    pub fn set_policy(&mut self, policy: ForgettingPolicy) -> Result<()> {
        policy.validate()?;
        self.config.policy = policy;
        Ok(())
    }

    pub fn inference_config_mut(&mut self) -> &mut InferenceConfig {
        &mut self.config.inference
    }

    pub fn hub(&self) -> Arc<EventHub> {
        Arc::clone(&self.hub)
    }

    pub fn blobs(&self) -> &Blobs {
        &self.blobs
    }

    /// Records kept by an in-memory journal.
    pub fn log_records(&self) -> Option<&[EventRecord]> {
        self.journal.records()
    }

    pub fn set_snapshot_every(&mut self, every: u64) {
        self.journal.set_snapshot_every(every);
    }

    pub fn access_events(&self) -> Vec<AccessEvent> {
        self.access.lock().clone()
    }

    /// Records an access without a commit. Reads through the facades land
    /// here; they are evidence for inference, not state changes.
    pub fn push_access(&self, a: AccessEvent) {
        let mut access = self.access.lock();
        if access.len() >= ACCESS_LOG_CAP {
            access.drain(..ACCESS_LOG_CAP / 10);
        }
        access.push(a);
    }

    pub(crate) fn batch(&self, now: Timestamp) -> Batch {
        self.graph.batch(now)
    }

    /// Attaches extra payload to the ApiEvent of the next commit.
    pub(crate) fn set_event_extra(&self, extra: Value) {
        *self.pending_extra.lock() = Some(extra);
    }

    /// Applies a batch atomically, journals it, and broadcasts its ApiEvent.
    pub(crate) fn commit(&mut self, now: Timestamp, op: &str, batch: Batch, meta: Value) -> Result<EventRecord> {
        let rec = self.graph.commit(now, op, batch.mutations, meta)?;
        self.views.invalidate();
        self.journal.append(&rec)?;
        if self.journal.wants_snapshot() {
            self.snapshot()?;
        }
        let extra = self.pending_extra.lock().take();
        self.hub.broadcast(ApiEvent::from_record(&rec, extra));
        Ok(rec)
    }

    /// Writes a snapshot (and the aux sidecar) when backed by a directory.
    pub fn snapshot(&mut self) -> Result<()> {
        if let Some(dir) = self.journal.dir().map(Path::to_path_buf) {
            let aux = AuxState {
                seq: self.graph.seq(),
                proposals: self.proposals.clone(),
                access: self.access.lock().clone(),
            };
            let tmp = dir.join(format!("{AUX_FILE}.tmp"));
            fs::write(&tmp, serde_json::to_string(&aux).expect("aux serializes"))?;
            fs::rename(tmp, dir.join(AUX_FILE))?;
            self.journal.write_snapshot(&self.graph)?;
        }
        Ok(())
    }

    /// Snapshot on clean shutdown.
    pub fn close(mut self) -> Result<()> {
        self.snapshot()?;
        self.journal.flush()
    }

    pub fn node(&self, id: &NodeId) -> Result<&Node> {
        self.graph.node(id).ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn item(&self, id: &NodeId) -> Result<&Node> {
        match self.graph.node(id) {
            Some(n) if n.kind.is_item() => Ok(n),
            _ => Err(Error::UnknownId(id.to_string())),
        }
    }

    /// Item ids with zero memberships, ascending.
    pub fn unfiled(&self) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = NodeKind::ALL
            .into_iter()
            .filter(|k| k.is_item())
            .flat_map(|k| self.graph.ids_of_kind(k))
            .filter(|id| self.graph.in_edges(id, EdgeLabel::ContainsItem).next().is_none())
            .cloned()
            .collect();
        out.sort();
        out
    }

    /// Reads an item's content (hot or archived).
    pub fn content(&self, item: &NodeId) -> Result<Option<Vec<u8>>> {
        let node = self.item(item)?;
        if let Some(text) = node.attrs.str(keys::TEXT) {
            return Ok(Some(text.as_bytes().to_vec()));
        }
        match node.attrs.str(keys::CONTENT_REF) {
            Some(h) => self.blobs.get(h),
            None => Ok(None),
        }
    }

    pub(crate) fn ref_content(&mut self, hash: &str) {
        *self.blob_refs.entry(hash.to_string()).or_default() += 1;
    }

    /// Drops one live reference; returns true when none remain.
    pub(crate) fn unref_content(&mut self, hash: &str) -> bool {
        match self.blob_refs.get_mut(hash) {
            Some(n) if *n > 1 => {
                *n -= 1;
                false
            }
            _ => {
                self.blob_refs.remove(hash);
                true
            }
        }
    }
}

fn live_content_ref(n: &Node) -> Option<&str> {
    if n.kind.is_item() && !n.attrs.flag(keys::ARCHIVED) {
        n.attrs.str(keys::CONTENT_REF)
    } else {
        None
    }
}
