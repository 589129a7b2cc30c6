//! Typed property graph with an append-only event log.
//!
//! Every state change is a [`Commit`]: a batch of primitive [`Mutation`]s
//! applied atomically and recorded as one [`EventRecord`]. Replaying the
//! records in seq order reproduces the graph exactly.

mod attrs;
pub mod journal;
mod log;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use compact_str::{format_compact, CompactString};
use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::error::{Error, Result};

pub use attrs::{Attrs, Scalar};
pub use log::{parse_log, recover, EventRecord, Snapshot};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(CompactString);

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(CompactString);

macro_rules! id_impls {
    ($t:ty) => {
        impl $t {
            pub fn new(s: impl AsRef<str>) -> Self {
                Self(CompactString::new(s.as_ref()))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }

            /// Short, store-unique suffix used to disambiguate display names.
            pub fn short(&self) -> String {
                short_id(&self.0)
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $t {
            fn from(s: &str) -> Self {
                Self::new(s)
            }
        }
    };
}

id_impls!(NodeId);
id_impls!(EdgeId);

// Generated ids are 24 hex chars: 11 of epoch millis, 8 of commit seq,
// 5 of slot within the commit.
fn make_id(ms: i64, seq: u64, slot: u32) -> CompactString {
    format_compact!("{:011x}{:08x}{:05x}", ms.max(0), seq, slot)
}

fn short_id(id: &str) -> String {
    if id.len() == 24 && id.bytes().all(|b| b.is_ascii_hexdigit()) {
        let seq = u64::from_str_radix(&id[11..19], 16).unwrap_or(0);
        let slot = u32::from_str_radix(&id[19..], 16).unwrap_or(0);
        if slot == 0 {
            format!("{seq:x}")
        } else {
            format!("{seq:x}.{slot:x}")
        }
    } else {
        let start = id.len().saturating_sub(6);
        id[start..].to_string()
    }
}

/// Commit seq embedded in a generated id, if the id has the generated form.
pub fn id_seq(id: &str) -> Option<u64> {
    if id.len() == 24 {
        u64::from_str_radix(&id[11..19], 16).ok()
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NodeKind {
    File,
    Mail,
    Bookmark,
    Event,
    Contact,
    Note,
    Context,
    Stub,
}

impl NodeKind {
    pub const ALL: [NodeKind; 8] = [
        NodeKind::File,
        NodeKind::Mail,
        NodeKind::Bookmark,
        NodeKind::Event,
        NodeKind::Contact,
        NodeKind::Note,
        NodeKind::Context,
        NodeKind::Stub,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::File => "FILE",
            NodeKind::Mail => "MAIL",
            NodeKind::Bookmark => "BOOKMARK",
            NodeKind::Event => "EVENT",
            NodeKind::Contact => "CONTACT",
            NodeKind::Note => "NOTE",
            NodeKind::Context => "CONTEXT",
            NodeKind::Stub => "STUB",
        }
    }

    pub fn parse(s: &str) -> Option<NodeKind> {
        NodeKind::ALL.into_iter().find(|k| k.as_str().eq_ignore_ascii_case(s))
    }

    /// Information items, as opposed to structural nodes.
    pub fn is_item(self) -> bool {
        !matches!(self, NodeKind::Context | NodeKind::Stub)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeLabel {
    #[serde(rename = "containsItem")]
    ContainsItem,
    #[serde(rename = "hasSubContext")]
    HasSubContext,
    #[serde(rename = "isRelatedTo")]
    IsRelatedTo,
    #[serde(rename = "isPartOf")]
    IsPartOf,
    #[serde(rename = "inReplyTo")]
    InReplyTo,
    #[serde(rename = "mergedInto")]
    MergedInto,
    #[serde(rename = "splitInto")]
    SplitInto,
    #[serde(rename = "condensedInto")]
    CondensedInto,
}

impl EdgeLabel {
    pub const ALL: [EdgeLabel; 8] = [
        EdgeLabel::ContainsItem,
        EdgeLabel::HasSubContext,
        EdgeLabel::IsRelatedTo,
        EdgeLabel::IsPartOf,
        EdgeLabel::InReplyTo,
        EdgeLabel::MergedInto,
        EdgeLabel::SplitInto,
        EdgeLabel::CondensedInto,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    #[serde(default)]
    pub attrs: Attrs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub src: NodeId,
    pub label: EdgeLabel,
    pub dst: NodeId,
    #[serde(default)]
    pub attrs: Attrs,
}

/// A primitive, replayable state change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Mutation {
    AddNode {
        id: NodeId,
        kind: NodeKind,
        #[serde(default)]
        attrs: Attrs,
    },
    SetNodeAttrs {
        id: NodeId,
        #[serde(default)]
        set: Attrs,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        unset: Vec<CompactString>,
    },
    /// Removes the node together with every incident edge.
    RemoveNode { id: NodeId },
    AddEdge {
        id: EdgeId,
        src: NodeId,
        label: EdgeLabel,
        dst: NodeId,
        #[serde(default)]
        attrs: Attrs,
    },
    SetEdgeAttrs {
        id: EdgeId,
        #[serde(default)]
        set: Attrs,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        unset: Vec<CompactString>,
    },
    RemoveEdge { id: EdgeId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Out,
    In,
    Both,
}

/// Mutations being collected for the next commit. Allocates ids that are
/// unique across the store because they embed the commit's seq.
#[derive(Debug)]
pub struct Batch {
    seq: u64,
    ms: i64,
    slot: u32,
    pub mutations: Vec<Mutation>,
}

impl Batch {
    pub fn node_id(&mut self) -> NodeId {
        self.slot += 1;
        NodeId(make_id(self.ms, self.seq, self.slot - 1))
    }

    pub fn edge_id(&mut self) -> EdgeId {
        self.slot += 1;
        EdgeId(make_id(self.ms, self.seq, self.slot - 1))
    }

    pub fn push(&mut self, m: Mutation) {
        self.mutations.push(m);
    }

    pub fn is_empty(&self) -> bool {
        self.mutations.is_empty()
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }
}

type Adjacency = HashMap<NodeId, BTreeSet<(EdgeLabel, EdgeId)>>;

#[derive(Clone, Debug, Default)]
pub struct Graph {
    seq: u64,
    nodes: HashMap<NodeId, Node>,
    edges: HashMap<EdgeId, Edge>,
    out: Adjacency,
    inc: Adjacency,
    triples: HashMap<(NodeId, EdgeLabel, NodeId), EdgeId>,
    by_kind: HashMap<NodeKind, BTreeSet<NodeId>>,
}

enum Undo {
    DropNode(NodeId),
    RestoreNodeAttrs(NodeId, Attrs),
    RestoreNode(Node, Vec<Edge>),
    DropEdge(EdgeId),
    RestoreEdgeAttrs(EdgeId, Attrs),
    RestoreEdge(Edge),
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// High-water seq: the seq of the last applied commit.
    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn edge(&self, id: &EdgeId) -> Option<&Edge> {
        self.edges.get(id)
    }

    pub fn contains_node(&self, id: &NodeId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    /// Node ids of one kind, ascending.
    pub fn ids_of_kind(&self, kind: NodeKind) -> impl Iterator<Item = &NodeId> + '_ {
        self.by_kind.get(&kind).into_iter().flatten()
    }

    pub fn count_of_kind(&self, kind: NodeKind) -> usize {
        self.by_kind.get(&kind).map_or(0, BTreeSet::len)
    }

    /// Outgoing edges of `id` carrying `label`, in edge id order.
    pub fn out_edges(&self, id: &NodeId, label: EdgeLabel) -> impl Iterator<Item = &Edge> + '_ {
        labelled(&self.out, id, label).map(move |eid| &self.edges[eid])
    }

    /// Incoming edges of `id` carrying `label`, in edge id order.
    pub fn in_edges(&self, id: &NodeId, label: EdgeLabel) -> impl Iterator<Item = &Edge> + '_ {
        labelled(&self.inc, id, label).map(move |eid| &self.edges[eid])
    }

    pub fn out_degree(&self, id: &NodeId, label: EdgeLabel) -> usize {
        labelled(&self.out, id, label).count()
    }

    pub fn find_edge(&self, src: &NodeId, label: EdgeLabel, dst: &NodeId) -> Option<&Edge> {
        self.triples
            .get(&(src.clone(), label, dst.clone()))
            .map(|eid| &self.edges[eid])
    }

    /// Nodes adjacent to `node` via edges matching `label` (any label when
    /// `None`), sorted ascending and deduplicated.
    pub fn neighbors(
        &self,
        node: &NodeId,
        label: Option<EdgeLabel>,
        direction: Direction,
    ) -> Result<Vec<NodeId>> {
        if !self.nodes.contains_key(node) {
            return Err(Error::UnknownId(node.to_string()));
        }
        let mut found = BTreeSet::new();
        let mut collect = |adj: &Adjacency, outgoing: bool| {
            for (l, eid) in adj.get(node).into_iter().flatten() {
                if label.is_some_and(|want| want != *l) {
                    continue;
                }
                let e = &self.edges[eid];
                found.insert(if outgoing { e.dst.clone() } else { e.src.clone() });
            }
        };
        if matches!(direction, Direction::Out | Direction::Both) {
            collect(&self.out, true);
        }
        if matches!(direction, Direction::In | Direction::Both) {
            collect(&self.inc, false);
        }
        Ok(found.into_iter().collect())
    }

    /// Starts a batch for the commit that will receive seq `self.seq() + 1`.
    pub fn batch(&self, now: Timestamp) -> Batch {
        Batch {
            seq: self.seq + 1,
            ms: now.timestamp_millis(),
            slot: 0,
            mutations: Vec::new(),
        }
    }

    /// Applies `mutations` atomically and appends a record with the next seq.
    pub fn commit(
        &mut self,
        now: Timestamp,
        op: &str,
        mutations: Vec<Mutation>,
        meta: serde_json::Value,
    ) -> Result<EventRecord> {
        self.apply_all(&mutations)?;
        self.seq += 1;
        Ok(EventRecord::new(self.seq, now, op, mutations, meta))
    }

    /// Applies one mutation as its own commit.
    pub fn apply_mutation(&mut self, mutation: Mutation, now: Timestamp) -> Result<EventRecord> {
        let op = mutation_tag(&mutation);
        self.commit(now, op, vec![mutation], serde_json::Value::Null)
    }

    /// Re-applies a recorded commit. The record must carry the next seq.
    pub fn replay(&mut self, record: &EventRecord) -> Result<()> {
        if record.seq != self.seq + 1 {
            return Err(Error::GapInLog { expected: self.seq + 1, found: record.seq });
        }
        let mutations = record.mutations()?;
        self.apply_all(&mutations)?;
        self.seq = record.seq;
        Ok(())
    }

    fn apply_all(&mut self, mutations: &[Mutation]) -> Result<()> {
        let mut undo = Vec::with_capacity(mutations.len());
        for m in mutations {
            match self.apply_one(m) {
                Ok(u) => undo.push(u),
                Err(e) => {
                    for u in undo.into_iter().rev() {
                        self.revert(u);
                    }
                    return Err(e);
                }
            }
        }
        Ok(())
    }

    fn apply_one(&mut self, m: &Mutation) -> Result<Undo> {
        match m {
            Mutation::AddNode { id, kind, attrs } => {
                if self.nodes.contains_key(id) {
                    return Err(Error::InvariantViolation(format!("duplicate node id {id}")));
                }
                attrs.check_keys()?;
                self.insert_node(Node { id: id.clone(), kind: *kind, attrs: attrs.clone() });
                Ok(Undo::DropNode(id.clone()))
            }
            Mutation::SetNodeAttrs { id, set, unset } => {
                set.check_keys()?;
                let node = self.nodes.get_mut(id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
                let old = node.attrs.clone();
                node.attrs.merge(set, unset);
                Ok(Undo::RestoreNodeAttrs(id.clone(), old))
            }
            Mutation::RemoveNode { id } => {
                if !self.nodes.contains_key(id) {
                    return Err(Error::UnknownId(id.to_string()));
                }
                let incident: BTreeSet<EdgeId> = self
                    .out
                    .get(id)
                    .into_iter()
                    .chain(self.inc.get(id))
                    .flatten()
                    .map(|(_, e)| e.clone())
                    .collect();
                let edges: Vec<Edge> = incident.iter().map(|e| self.remove_edge_raw(e)).collect();
                let node = self.remove_node_raw(id);
                Ok(Undo::RestoreNode(node, edges))
            }
            Mutation::AddEdge { id, src, label, dst, attrs } => {
                if self.edges.contains_key(id) {
                    return Err(Error::InvariantViolation(format!("duplicate edge id {id}")));
                }
                for end in [src, dst] {
                    if !self.nodes.contains_key(end) {
                        return Err(Error::UnknownId(end.to_string()));
                    }
                }
                if self.triples.contains_key(&(src.clone(), *label, dst.clone())) {
                    return Err(Error::InvariantViolation(format!(
                        "duplicate edge {src} -{label:?}-> {dst}"
                    )));
                }
                attrs.check_keys()?;
                self.insert_edge(Edge {
                    id: id.clone(),
                    src: src.clone(),
                    label: *label,
                    dst: dst.clone(),
                    attrs: attrs.clone(),
                });
                Ok(Undo::DropEdge(id.clone()))
            }
            Mutation::SetEdgeAttrs { id, set, unset } => {
                set.check_keys()?;
                let edge = self.edges.get_mut(id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
                let old = edge.attrs.clone();
                edge.attrs.merge(set, unset);
                Ok(Undo::RestoreEdgeAttrs(id.clone(), old))
            }
            Mutation::RemoveEdge { id } => {
                if !self.edges.contains_key(id) {
                    return Err(Error::UnknownId(id.to_string()));
                }
                Ok(Undo::RestoreEdge(self.remove_edge_raw(id)))
            }
        }
    }

    fn revert(&mut self, undo: Undo) {
        match undo {
            Undo::DropNode(id) => {
                self.remove_node_raw(&id);
            }
            Undo::RestoreNodeAttrs(id, attrs) => {
                if let Some(n) = self.nodes.get_mut(&id) {
                    n.attrs = attrs;
                }
            }
            Undo::RestoreNode(node, edges) => {
                self.insert_node(node);
                for e in edges {
                    self.insert_edge(e);
                }
            }
            Undo::DropEdge(id) => {
                self.remove_edge_raw(&id);
            }
            Undo::RestoreEdgeAttrs(id, attrs) => {
                if let Some(e) = self.edges.get_mut(&id) {
                    e.attrs = attrs;
                }
            }
            Undo::RestoreEdge(e) => self.insert_edge(e),
        }
    }

    fn insert_node(&mut self, node: Node) {
        self.by_kind.entry(node.kind).or_default().insert(node.id.clone());
        self.nodes.insert(node.id.clone(), node);
    }

    fn remove_node_raw(&mut self, id: &NodeId) -> Node {
        let node = self.nodes.remove(id).expect("node present");
        if let Some(set) = self.by_kind.get_mut(&node.kind) {
            set.remove(id);
        }
        self.out.remove(id);
        self.inc.remove(id);
        node
    }

    fn insert_edge(&mut self, e: Edge) {
        self.out.entry(e.src.clone()).or_default().insert((e.label, e.id.clone()));
        self.inc.entry(e.dst.clone()).or_default().insert((e.label, e.id.clone()));
        self.triples.insert((e.src.clone(), e.label, e.dst.clone()), e.id.clone());
        self.edges.insert(e.id.clone(), e);
    }

    fn remove_edge_raw(&mut self, id: &EdgeId) -> Edge {
        let e = self.edges.remove(id).expect("edge present");
        if let Some(set) = self.out.get_mut(&e.src) {
            set.remove(&(e.label, e.id.clone()));
        }
        if let Some(set) = self.inc.get_mut(&e.dst) {
            set.remove(&(e.label, e.id.clone()));
        }
        self.triples.remove(&(e.src.clone(), e.label, e.dst.clone()));
        e
    }

    pub fn snapshot(&self) -> Snapshot {
        let mut nodes: Vec<Node> = self.nodes.values().cloned().collect();
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        let mut edges: Vec<Edge> = self.edges.values().cloned().collect();
        edges.sort_by(|a, b| a.id.cmp(&b.id));
        Snapshot { seq: self.seq, nodes, edges }
    }

    pub(crate) fn from_snapshot(snapshot: Snapshot) -> Result<Graph> {
        let mut g = Graph::new();
        for n in snapshot.nodes {
            if g.nodes.contains_key(&n.id) {
                return Err(Error::InvariantViolation(format!("duplicate node id {}", n.id)));
            }
            g.insert_node(n);
        }
        for e in snapshot.edges {
            if g.edges.contains_key(&e.id) {
                return Err(Error::InvariantViolation(format!("duplicate edge id {}", e.id)));
            }
            for end in [&e.src, &e.dst] {
                if !g.nodes.contains_key(end) {
                    return Err(Error::UnknownId(end.to_string()));
                }
            }
            g.insert_edge(e);
        }
        g.seq = snapshot.seq;
        Ok(g)
    }

    /// True when every edge endpoint resolves. Holds at every commit point.
    pub fn check_no_dangling(&self) -> bool {
        self.edges
            .values()
            .all(|e| self.nodes.contains_key(&e.src) && self.nodes.contains_key(&e.dst))
    }
}

fn labelled<'a>(
    adj: &'a Adjacency,
    id: &NodeId,
    label: EdgeLabel,
) -> impl Iterator<Item = &'a EdgeId> + 'a {
    let lo = (label, EdgeId(CompactString::const_new("")));
    adj.get(id)
        .into_iter()
        .flat_map(move |set| set.range(lo.clone()..))
        .take_while(move |(l, _)| *l == label)
        .map(|(_, e)| e)
}

fn mutation_tag(m: &Mutation) -> &'static str {
    match m {
        Mutation::AddNode { .. } => "add_node",
        Mutation::SetNodeAttrs { .. } => "set_node_attrs",
        Mutation::RemoveNode { .. } => "remove_node",
        Mutation::AddEdge { .. } => "add_edge",
        Mutation::SetEdgeAttrs { .. } => "set_edge_attrs",
        Mutation::RemoveEdge { .. } => "remove_edge",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::parse_ts;

    fn t0() -> Timestamp {
        parse_ts("2024-01-01T00:00:00Z").unwrap()
    }

    fn add_node(g: &mut Graph, kind: NodeKind, name: &str) -> NodeId {
        let mut b = g.batch(t0());
        let id = b.node_id();
        let attrs = Attrs::from_iter([("name", Scalar::from(name))]);
        g.apply_mutation(Mutation::AddNode { id: id.clone(), kind, attrs }, t0()).unwrap();
        id
    }

    fn add_edge(g: &mut Graph, src: &NodeId, label: EdgeLabel, dst: &NodeId) -> Result<EventRecord> {
        let mut b = g.batch(t0());
        let id = b.edge_id();
        g.apply_mutation(
            Mutation::AddEdge {
                id,
                src: src.clone(),
                label,
                dst: dst.clone(),
                attrs: Attrs::default(),
            },
            t0(),
        )
    }

    #[test]
    fn first_mutation_gets_seq_one() {
        let mut g = Graph::new();
        let mut b = g.batch(t0());
        let id = b.node_id();
        let rec = g
            .apply_mutation(
                Mutation::AddNode {
                    id,
                    kind: NodeKind::Context,
                    attrs: Attrs::from_iter([("name", Scalar::from("XY"))]),
                },
                t0(),
            )
            .unwrap();
        assert_eq!(rec.seq, 1);
        assert_eq!(g.node_count(), 1);
        assert_eq!(g.seq(), 1);
    }

    #[test]
    fn edge_to_missing_node_is_unknown_id() {
        let mut g = Graph::new();
        let a = add_node(&mut g, NodeKind::Context, "a");
        let err = add_edge(&mut g, &a, EdgeLabel::ContainsItem, &NodeId::new("nope")).unwrap_err();
        assert_eq!(err.code(), "UNKNOWN_ID");
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.seq(), 1);
    }

    #[test]
    fn duplicate_ids_and_triples_are_rejected() {
        let mut g = Graph::new();
        let a = add_node(&mut g, NodeKind::Context, "a");
        let dup = Mutation::AddNode { id: a.clone(), kind: NodeKind::File, attrs: Attrs::default() };
        assert_eq!(g.apply_mutation(dup, t0()).unwrap_err().code(), "INVARIANT_VIOLATION");
        let f = add_node(&mut g, NodeKind::File, "f");
        add_edge(&mut g, &a, EdgeLabel::ContainsItem, &f).unwrap();
        let err = add_edge(&mut g, &a, EdgeLabel::ContainsItem, &f).unwrap_err();
        assert_eq!(err.code(), "INVARIANT_VIOLATION");
    }

    #[test]
    fn failed_batch_leaves_no_trace() {
        let mut g = Graph::new();
        let mut b = g.batch(t0());
        let n = b.node_id();
        let e = b.edge_id();
        let muts = vec![
            Mutation::AddNode { id: n.clone(), kind: NodeKind::File, attrs: Attrs::default() },
            Mutation::AddEdge {
                id: e,
                src: n.clone(),
                label: EdgeLabel::IsRelatedTo,
                dst: NodeId::new("missing"),
                attrs: Attrs::default(),
            },
        ];
        assert!(g.commit(t0(), "x", muts, serde_json::Value::Null).is_err());
        assert_eq!(g.node_count(), 0);
        assert_eq!(g.seq(), 0);
        assert_eq!(g.count_of_kind(NodeKind::File), 0);
    }

    #[test]
    fn remove_node_cascades_and_undo_restores() {
        let mut g = Graph::new();
        let c = add_node(&mut g, NodeKind::Context, "c");
        let f = add_node(&mut g, NodeKind::File, "f");
        add_edge(&mut g, &c, EdgeLabel::ContainsItem, &f).unwrap();
        let muts = vec![
            Mutation::RemoveNode { id: f.clone() },
            Mutation::RemoveNode { id: NodeId::new("ghost") },
        ];
        assert!(g.commit(t0(), "x", muts, serde_json::Value::Null).is_err());
        assert_eq!(g.edge_count(), 1);
        assert!(g.find_edge(&c, EdgeLabel::ContainsItem, &f).is_some());

        g.apply_mutation(Mutation::RemoveNode { id: f.clone() }, t0()).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert!(g.check_no_dangling());
        assert!(g.neighbors(&c, None, Direction::Out).unwrap().is_empty());
    }

    #[test]
    fn neighbors_isolated_node_is_empty() {
        let mut g = Graph::new();
        let a = add_node(&mut g, NodeKind::Note, "a");
        assert!(g.neighbors(&a, None, Direction::Both).unwrap().is_empty());
        assert_eq!(
            g.neighbors(&NodeId::new("zz"), None, Direction::Out).unwrap_err().code(),
            "UNKNOWN_ID"
        );
    }

    #[test]
    fn neighbors_sorted_filtered_and_deduplicated() {
        let mut g = Graph::new();
        let c = add_node(&mut g, NodeKind::Context, "c");
        let items: Vec<NodeId> = (0..3).map(|i| add_node(&mut g, NodeKind::File, &format!("f{i}"))).collect();
        let sub = add_node(&mut g, NodeKind::Context, "sub");
        // insert in reverse so edge order differs from node order
        for it in items.iter().rev() {
            add_edge(&mut g, &c, EdgeLabel::ContainsItem, it).unwrap();
        }
        add_edge(&mut g, &c, EdgeLabel::HasSubContext, &sub).unwrap();
        add_edge(&mut g, &c, EdgeLabel::IsRelatedTo, &items[1]).unwrap();

        let mut expected = items.clone();
        expected.sort();
        assert_eq!(g.neighbors(&c, Some(EdgeLabel::ContainsItem), Direction::Out).unwrap(), expected);

        // brute force over the edge list for the unlabelled union
        let mut brute: Vec<NodeId> = g.edges().filter(|e| e.src == c).map(|e| e.dst.clone()).collect();
        brute.sort();
        brute.dedup();
        let all = g.neighbors(&c, None, Direction::Out).unwrap();
        assert_eq!(all, brute);
        assert_eq!(all.len(), 4);
        assert_eq!(all, g.neighbors(&c, None, Direction::Out).unwrap());
        assert_eq!(g.neighbors(&items[1], None, Direction::In).unwrap(), vec![c.clone()]);
    }

    #[test]
    fn generated_ids_sort_by_time_then_seq() {
        let g = Graph::new();
        let mut b1 = g.batch(t0());
        let a = b1.node_id();
        let b = b1.node_id();
        assert!(a < b);
        assert_eq!(a.as_str().len(), 24);
        assert_eq!(id_seq(a.as_str()), Some(1));
        assert_eq!(a.short(), "1");
        assert_eq!(b.short(), "1.1");
        let later = g.batch(crate::clock::plus_days(t0(), 1.0)).node_id();
        assert!(later > b);
    }
}
