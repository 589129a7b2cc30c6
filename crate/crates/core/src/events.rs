//! Live event stream for the sidebar: one [`ApiEvent`] per committed record,
//! fanned out to subscribers with a bounded replay ring.

use std::collections::VecDeque;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::mpsc;

use crate::graph::EventRecord;

pub const REPLAY_RING: usize = 10_000;
pub const SUBSCRIBER_BACKLOG: usize = 1_000;
pub const HEARTBEAT_SECS: u64 = 15;
pub const HEARTBEAT_LINE: &str = ": heartbeat\n\n";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ApiEventType {
    ContextSwitched,
    ContextCreated,
    ContextMerged,
    ContextSplit,
    ItemAdded,
    ItemRemoved,
    MeasureChanged,
    TidyupReport,
    ProposalAdded,
}

impl ApiEventType {
    pub fn as_str(self) -> &'static str {
        match self {
            ApiEventType::ContextSwitched => "CONTEXT_SWITCHED",
            ApiEventType::ContextCreated => "CONTEXT_CREATED",
            ApiEventType::ContextMerged => "CONTEXT_MERGED",
            ApiEventType::ContextSplit => "CONTEXT_SPLIT",
            ApiEventType::ItemAdded => "ITEM_ADDED",
            ApiEventType::ItemRemoved => "ITEM_REMOVED",
            ApiEventType::MeasureChanged => "MEASURE_CHANGED",
            ApiEventType::TidyupReport => "TIDYUP_REPORT",
            ApiEventType::ProposalAdded => "PROPOSAL_ADDED",
        }
    }

    /// Event type for a record's op tag.
    ///
    /// | op                                                         | event            |
    /// |------------------------------------------------------------|------------------|
    /// | create_context                                             | CONTEXT_CREATED  |
    /// | set_current                                                | CONTEXT_SWITCHED |
    /// | merge_contexts, retract_context                            | CONTEXT_MERGED   |
    /// | split_context                                              | CONTEXT_SPLIT    |
    /// | remove_item                                                | ITEM_REMOVED     |
    /// | touch, pin, set_context_state, measure, condense, delete   | MEASURE_CHANGED  |
    /// | proposal_added, reject_proposal                            | PROPOSAL_ADDED   |
    /// | tidyup_report                                              | TIDYUP_REPORT    |
    /// | anything else (add_item, ingest_item, update_item, move…)  | ITEM_ADDED       |
    pub fn for_op(op: &str) -> ApiEventType {
        match op {
            "create_context" => ApiEventType::ContextCreated,
            "set_current" => ApiEventType::ContextSwitched,
            "merge_contexts" | "retract_context" => ApiEventType::ContextMerged,
            "split_context" => ApiEventType::ContextSplit,
            "remove_item" => ApiEventType::ItemRemoved,
            "touch" | "pin" | "set_context_state" | "measure" | "condense" | "delete_item" => {
                ApiEventType::MeasureChanged
            }
            "proposal_added" | "reject_proposal" => ApiEventType::ProposalAdded,
            "tidyup_report" => ApiEventType::TidyupReport,
            _ => ApiEventType::ItemAdded,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiEvent {
    pub seq: u64,
    #[serde(rename = "type")]
    pub kind: ApiEventType,
    pub payload: Value,
}

impl ApiEvent {
    pub fn from_record(rec: &EventRecord, extra: Option<Value>) -> ApiEvent {
        let mut payload = serde_json::json!({ "op": rec.op, "ts": rec.ts, "meta": rec.meta() });
        if let Some(Value::Object(extra)) = extra {
            payload.as_object_mut().expect("object").extend(extra);
        }
        ApiEvent { seq: rec.seq, kind: ApiEventType::for_op(&rec.op), payload }
    }

    /// Server-sent-events framing: `id:`, `event:`, `data:` and a blank line.
    pub fn to_sse(&self) -> String {
        format!(
            "id: {}\nevent: {}\ndata: {}\n\n",
            self.seq,
            self.kind.as_str(),
            serde_json::to_string(self).expect("event serializes")
        )
    }
}

pub struct Subscription {
    /// Ring events newer than the requested Last-Event-ID.
    pub replay: Vec<ApiEvent>,
    pub rx: mpsc::Receiver<ApiEvent>,
}

#[derive(Default)]
struct HubInner {
    ring: VecDeque<ApiEvent>,
    subscribers: Vec<mpsc::Sender<ApiEvent>>,
}

#[derive(Default)]
pub struct EventHub {
    inner: Mutex<HubInner>,
}

impl EventHub {
    pub fn new() -> Self {
        Self::default()
    }

    /// Delivers `event` to every live subscriber and returns how many took it.
    /// Subscribers whose backlog is full or whose receiver is gone are dropped.
    pub fn broadcast(&self, event: ApiEvent) -> usize {
        let mut inner = self.inner.lock();
        if inner.ring.len() == REPLAY_RING {
            inner.ring.pop_front();
        }
        inner.ring.push_back(event.clone());
        let mut delivered = 0;
        inner.subscribers.retain(|tx| match tx.try_send(event.clone()) {
            Ok(()) => {
                delivered += 1;
                true
            }
            Err(_) => false,
        });
        delivered
    }

    pub fn subscribe(&self, last_event_id: Option<u64>) -> Subscription {
        let mut inner = self.inner.lock();
        let replay = match last_event_id {
            Some(last) => inner.ring.iter().filter(|e| e.seq > last).cloned().collect(),
            None => Vec::new(),
        };
        let (tx, rx) = mpsc::channel(SUBSCRIBER_BACKLOG);
        inner.subscribers.push(tx);
        Subscription { replay, rx }
    }

    pub fn subscriber_count(&self) -> usize {
        let mut inner = self.inner.lock();
        inner.subscribers.retain(|tx| !tx.is_closed());
        inner.subscribers.len()
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.inner.lock().ring.back().map(|e| e.seq)
    }
}
