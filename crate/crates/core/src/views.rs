//! Per-application views of a context and the deltas between them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::context::ContextState;
use crate::desk::{keys, Desk};
use crate::error::{Error, Result};
use crate::forgetting::Measure;
use crate::graph::{EdgeLabel, Node, NodeId, NodeKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ViewKind {
    Files,
    Links,
    Calendar,
    Contacts,
    Mails,
}

impl ViewKind {
    pub const ALL: [ViewKind; 5] = [ViewKind::Files, ViewKind::Links, ViewKind::Calendar, ViewKind::Contacts, ViewKind::Mails];

    pub fn admits(self, kind: NodeKind) -> bool {
        match self {
            ViewKind::Files => matches!(kind, NodeKind::File | NodeKind::Note),
            ViewKind::Links => kind == NodeKind::Bookmark,
            ViewKind::Calendar => kind == NodeKind::Event,
            ViewKind::Contacts => kind == NodeKind::Contact,
            ViewKind::Mails => kind == NodeKind::Mail,
        }
    }
}

/// Collection names reserved at the root of a FILES tree for the other
/// kinds' views when served over WebDAV.
pub const RESERVED: [(&str, ViewKind); 3] =
    [("calendar", ViewKind::Calendar), ("contacts", ViewKind::Contacts), ("links", ViewKind::Links)];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViewNode {
    pub name: String,
    pub node_id: Option<NodeId>,
    pub collection: bool,
    pub children: Vec<ViewNode>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViewTree {
    pub kind: ViewKind,
    pub ctx: NodeId,
    pub root: ViewNode,
    pub generated_at: Timestamp,
}

/// One entry of a flattened tree: its '/'-joined path below the root.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ViewPath {
    pub path: String,
    pub node_id: Option<NodeId>,
    pub collection: bool,
}

impl ViewNode {
    fn collect(&self, prefix: &str, out: &mut Vec<ViewPath>) {
        for c in &self.children {
            let path = if prefix.is_empty() { c.name.clone() } else { format!("{prefix}/{}", c.name) };
            out.push(ViewPath { path: path.clone(), node_id: c.node_id.clone(), collection: c.collection });
            if c.collection {
                c.collect(&path, out);
            }
        }
    }

    pub fn child(&self, name: &str) -> Option<&ViewNode> {
        self.children.iter().find(|c| c.name == name)
    }
}

impl ViewTree {
    pub fn empty(kind: ViewKind, ctx: NodeId, now: Timestamp) -> ViewTree {
        ViewTree {
            kind,
            ctx,
            root: ViewNode { name: String::new(), node_id: None, collection: true, children: Vec::new() },
            generated_at: now,
        }
    }

    /// Every node below the root in depth-first order.
    pub fn paths(&self) -> Vec<ViewPath> {
        let mut out = Vec::new();
        self.root.collect("", &mut out);
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.paths().iter().filter(|p| !p.collection).count()
    }

    /// Resolves '/'-separated segments below the root.
    pub fn lookup(&self, segments: &[&str]) -> Option<&ViewNode> {
        segments.iter().try_fold(&self.root, |n, s| if n.collection { n.child(s) } else { None })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewDelta {
    pub added: Vec<String>,
    pub removed: Vec<String>,
    /// (from, to) for a node whose path changed.
    pub moved: Vec<(String, String)>,
}

impl ViewDelta {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.moved.is_empty()
    }

    /// Applies the delta to a path set.
    pub fn apply(&self, paths: &BTreeSet<String>) -> BTreeSet<String> {
        let mut out = paths.clone();
        for p in self.removed.iter().chain(self.moved.iter().map(|(from, _)| from)) {
            out.remove(p);
        }
        out.extend(self.added.iter().cloned());
        out.extend(self.moved.iter().map(|(_, to)| to.clone()));
        out
    }
}

/// Path-wise difference. A node id that disappears from one path and shows
/// up under another counts as moved; pairs are matched in path order.
pub fn diff_views(old: &ViewTree, new: &ViewTree) -> Result<ViewDelta> {
    if old.kind != new.kind {
        return Err(Error::KindMismatch);
    }
    let (op, np) = (old.paths(), new.paths());
    let old_set: BTreeSet<&str> = op.iter().map(|p| p.path.as_str()).collect();
    let new_set: BTreeSet<&str> = np.iter().map(|p| p.path.as_str()).collect();
    let mut gone: BTreeMap<Option<&NodeId>, Vec<&str>> = BTreeMap::new();
    let mut came: BTreeMap<Option<&NodeId>, Vec<&str>> = BTreeMap::new();
    for p in &op {
        if !new_set.contains(p.path.as_str()) {
            gone.entry(p.node_id.as_ref()).or_default().push(&p.path);
        }
    }
    for p in &np {
        if !old_set.contains(p.path.as_str()) {
            came.entry(p.node_id.as_ref()).or_default().push(&p.path);
        }
    }
    let mut delta = ViewDelta::default();
    for (id, mut from) in gone {
        let mut to = match id {
            Some(_) => came.remove(&id).unwrap_or_default(),
            None => Vec::new(),
        };
        from.sort_unstable();
        to.sort_unstable();
        let n = from.len().min(to.len());
        delta.moved.extend(from[..n].iter().zip(&to[..n]).map(|(a, b)| (a.to_string(), b.to_string())));
        delta.removed.extend(from[n..].iter().map(|s| s.to_string()));
        delta.added.extend(to[n..].iter().map(|s| s.to_string()));
    }
    for (_, to) in came {
        delta.added.extend(to.into_iter().map(str::to_string));
    }
    delta.added.sort();
    delta.removed.sort();
    delta.moved.sort();
    Ok(delta)
}

/// Replaces characters that cannot appear in a path segment.
pub fn sanitize(name: &str) -> String {
    let s: String = name
        .trim()
        .chars()
        .map(|c| if c == '/' || c == '\\' || c.is_control() { '_' } else { c })
        .collect();
    match s.as_str() {
        "" | "." | ".." => "_".to_string(),
        _ => s,
    }
}

/// `stem-suffix.ext` for a dotted name, `name-suffix` otherwise.
pub fn with_suffix(name: &str, suffix: &str) -> String {
    match name.rfind('.') {
        Some(dot) if dot > 0 => format!("{}-{suffix}{}", &name[..dot], &name[dot..]),
        _ => format!("{name}-{suffix}"),
    }
}

/// Makes sibling names unique: within each group of equal names the lowest
/// id keeps the name and the others get their short id appended. `taken`
/// names are treated as already used.
pub fn dedup_names<T>(entries: &mut [(String, NodeId, T)], taken: &[&str]) {
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| (&entries[a].0, &entries[a].1).cmp(&(&entries[b].0, &entries[b].1)));
    let mut used: BTreeSet<String> = taken.iter().map(|s| s.to_string()).collect();
    let mut renames = Vec::new();
    for &i in &order {
        let (name, id, _) = &entries[i];
        if used.insert(name.clone()) {
            continue;
        }
        let mut candidate = with_suffix(name, &id.short());
        let mut n = 2;
        while !used.insert(candidate.clone()) {
            candidate = with_suffix(name, &format!("{}-{n}", id.short()));
            n += 1;
        }
        renames.push((i, candidate));
    }
    for (i, name) in renames {
        entries[i].0 = name;
    }
}

/// Display name of an item leaf in a view.
pub fn leaf_name(node: &Node) -> String {
    let name = node.attrs.str(keys::NAME).map(sanitize);
    match node.kind {
        NodeKind::Event => format!("{}.ics", node.id),
        NodeKind::Contact => format!("{}.vcf", node.id),
        NodeKind::Mail => format!("{}.eml", node.id),
        NodeKind::Bookmark => {
            let title = name.or_else(|| node.attrs.str(keys::URI).map(sanitize)).unwrap_or_else(|| node.id.to_string());
            format!("{title}.url")
        }
        _ => name.unwrap_or_else(|| node.id.to_string()),
    }
}

/// Memberships shown in a view, by their applied measure flag.
pub fn visible(measure: Measure, include_hidden: bool) -> bool {
    measure == Measure::Keep || (include_hidden && measure == Measure::Hide)
}

#[derive(Default)]
pub struct ViewCache {
    trees: Mutex<HashMap<(NodeId, ViewKind, bool), Arc<ViewTree>>>,
}

impl ViewCache {
    pub fn invalidate(&self) {
        self.trees.lock().clear();
    }
}

impl Desk {
    /// Builds the view of `ctx` for one application kind. Leaves are members
    /// of a matching kind whose applied measure is KEEP (or HIDE with
    /// `include_hidden`). Only FILES views nest ACTIVE sub-contexts.
    pub fn materialize(&self, ctx: &NodeId, kind: ViewKind, now: Timestamp, include_hidden: bool) -> Result<ViewTree> {
        if self.context_state(ctx)? == ContextState::Retracted {
            return Err(Error::CtxRetracted(ctx.to_string()));
        }
        let key = (ctx.clone(), kind, include_hidden);
        if let Some(t) = self.views.trees.lock().get(&key) {
            let mut t = ViewTree::clone(t);
            t.generated_at = now;
            return Ok(t);
        }
        let mut root = self.build_level(ctx, kind, include_hidden, 0);
        root.name = sanitize(&self.context_name(ctx));
        root.node_id = Some(ctx.clone());
        let tree = ViewTree { kind, ctx: ctx.clone(), root, generated_at: now };
        self.views.trees.lock().insert(key, Arc::new(tree.clone()));
        Ok(tree)
    }

    fn build_level(&self, ctx: &NodeId, kind: ViewKind, include_hidden: bool, depth: usize) -> ViewNode {
        let mut colls: Vec<(String, NodeId, ())> = Vec::new();
        if kind == ViewKind::Files && depth <= self.graph.count_of_kind(NodeKind::Context) {
            for child in self.children_of(ctx) {
                if self.context_state(&child).ok() == Some(ContextState::Active) {
                    colls.push((sanitize(&self.context_name(&child)), child, ()));
                }
            }
        }
        let mut leaves: Vec<(String, NodeId, ())> = self
            .graph
            .out_edges(ctx, EdgeLabel::ContainsItem)
            .filter(|e| {
                let m = e.attrs.str(keys::MEASURE).and_then(Measure::parse).unwrap_or(Measure::Keep);
                visible(m, include_hidden)
            })
            .filter_map(|e| self.graph.node(&e.dst))
            .filter(|n| kind.admits(n.kind))
            .map(|n| (leaf_name(n), n.id.clone(), ()))
            .collect();
        let n_colls = colls.len();
        colls.append(&mut leaves);
        let taken: Vec<&str> = if kind == ViewKind::Files && depth == 0 { RESERVED.iter().map(|r| r.0).collect() } else { Vec::new() };
        dedup_names(&mut colls, &taken);
        let mut children: Vec<ViewNode> = colls
            .into_iter()
            .enumerate()
            .map(|(i, (name, id, ()))| {
                if i < n_colls {
                    let mut sub = self.build_level(&id, kind, include_hidden, depth + 1);
                    sub.name = name;
                    sub.node_id = Some(id);
                    sub
                } else {
                    ViewNode { name, node_id: Some(id), collection: false, children: Vec::new() }
                }
            })
            .collect();
        children.sort_by(|a, b| b.collection.cmp(&a.collection).then_with(|| a.name.cmp(&b.name)));
        ViewNode { name: String::new(), node_id: Some(ctx.clone()), collection: true, children }
    }

    /// Per-kind deltas between the old and new current context's views.
    pub fn on_context_switch(
        &self,
        old: Option<&NodeId>,
        new: &NodeId,
        now: Timestamp,
    ) -> Result<BTreeMap<ViewKind, ViewDelta>> {
        if self.context_state(new)? != ContextState::Active {
            return Err(Error::CtxNotActive(new.to_string()));
        }
        let mut out = BTreeMap::new();
        for kind in ViewKind::ALL {
            let before = match old {
                Some(o) if self.context_state(o).is_ok_and(|s| s != ContextState::Retracted) => {
                    self.materialize(o, kind, now, false)?
                }
                _ => ViewTree::empty(kind, new.clone(), now),
            };
            let after = self.materialize(new, kind, now, false)?;
            out.insert(kind, diff_views(&before, &after)?);
        }
        Ok(out)
    }
}
