//! Context spaces: hierarchy, memberships, the current context, and the
//! structural operations users perform on them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::clock::{from_ms, to_ms, Timestamp};
use crate::desk::{keys, Desk};
use crate::error::{Error, Result};
use crate::forgetting::Measure;
use crate::graph::{Attrs, Batch, Edge, EdgeLabel, Mutation, NodeId, NodeKind, Scalar};
use crate::inference::{AccessAction, AccessEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ContextState {
    Active,
    Hidden,
    Condensed,
    Archived,
    Retracted,
}

impl ContextState {
    pub fn as_str(self) -> &'static str {
        match self {
            ContextState::Active => "ACTIVE",
            ContextState::Hidden => "HIDDEN",
            ContextState::Condensed => "CONDENSED",
            ContextState::Archived => "ARCHIVED",
            ContextState::Retracted => "RETRACTED",
        }
    }

    pub fn parse(s: &str) -> Option<ContextState> {
        [
            ContextState::Active,
            ContextState::Hidden,
            ContextState::Condensed,
            ContextState::Archived,
            ContextState::Retracted,
        ]
        .into_iter()
        .find(|c| c.as_str().eq_ignore_ascii_case(s))
    }

    /// States whose contexts accept new memberships.
    pub fn is_writable(self) -> bool {
        matches!(self, ContextState::Active | ContextState::Hidden)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Origin {
    User,
    Inferred,
    Protocol,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::User => "USER",
            Origin::Inferred => "INFERRED",
            Origin::Protocol => "PROTOCOL",
        }
    }

    pub fn parse(s: &str) -> Option<Origin> {
        [Origin::User, Origin::Inferred, Origin::Protocol]
            .into_iter()
            .find(|o| o.as_str().eq_ignore_ascii_case(s))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContextSpace {
    pub id: NodeId,
    pub name: String,
    pub state: ContextState,
    pub parent: Option<NodeId>,
    pub created_at: Timestamp,
    pub last_current_at: Timestamp,
    pub pinned: BTreeSet<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Membership {
    pub item: NodeId,
    pub ctx: NodeId,
    pub strength: f64,
    pub origin: Origin,
    pub created_at: Timestamp,
    pub last_access_at: Timestamp,
    /// Measure last applied by a tidy-up; KEEP when never applied.
    pub measure: Measure,
    pub pinned: bool,
}

impl Membership {
    pub(crate) fn from_edge(e: &Edge) -> Membership {
        let a = &e.attrs;
        Membership {
            item: e.dst.clone(),
            ctx: e.src.clone(),
            strength: a.float(keys::STRENGTH).unwrap_or(1.0),
            origin: a.str(keys::ORIGIN).and_then(Origin::parse).unwrap_or(Origin::User),
            created_at: from_ms(a.int(keys::CREATED_AT).unwrap_or(0)),
            last_access_at: from_ms(a.int(keys::LAST_ACCESS_AT).unwrap_or(0)),
            measure: a.str(keys::MEASURE).and_then(Measure::parse).unwrap_or(Measure::Keep),
            pinned: a.flag(keys::PINNED),
        }
    }

    pub(crate) fn last_access_ms(e: &Edge) -> i64 {
        e.attrs.int(keys::LAST_ACCESS_AT).unwrap_or(0)
    }

    pub(crate) fn to_attrs(&self) -> Attrs {
        let mut a = Attrs::new()
            .with(keys::STRENGTH, self.strength)
            .with(keys::ORIGIN, self.origin.as_str())
            .with(keys::CREATED_AT, to_ms(self.created_at))
            .with(keys::LAST_ACCESS_AT, to_ms(self.last_access_at));
        if self.measure != Measure::Keep {
            a.set(keys::MEASURE, self.measure.as_str());
        }
        if self.pinned {
            a.set(keys::PINNED, true);
        }
        a
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurrentContext {
    pub ctx: NodeId,
    pub since: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MergeReport {
    pub src: NodeId,
    pub dst: NodeId,
    /// Memberships that moved over as new dst memberships.
    pub moved: usize,
    /// Items already in dst whose strength took the max of both.
    pub combined: usize,
    pub reparented: Vec<NodeId>,
    pub dst_members: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReassignReport {
    pub ctx: NodeId,
    pub parent: Option<NodeId>,
    pub moved: usize,
    pub unfiled: Vec<NodeId>,
    pub reparented: Vec<NodeId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

fn batch_message_id(b: &Batch) -> Option<String> {
    b.mutations.iter().find_map(|m| match m {
        Mutation::AddNode { attrs, .. } => attrs.str(keys::MESSAGE_ID).map(str::to_string),
        _ => None,
    })
}

pub(crate) fn check_strength(strength: f64) -> Result<()> {
    if strength.is_nan() || strength <= 0.0 || strength > 1.0 {
        return Err(Error::BadStrength(strength));
    }
    Ok(())
}

impl Desk {
    pub fn context(&self, id: &NodeId) -> Result<ContextSpace> {
        let node = self.graph.node(id).filter(|n| n.kind == NodeKind::Context);
        let node = node.ok_or_else(|| Error::UnknownId(id.to_string()))?;
        let a = &node.attrs;
        Ok(ContextSpace {
            id: id.clone(),
            name: a.str(keys::NAME).unwrap_or_default().to_string(),
            state: self.context_state(id)?,
            parent: self.parent_of(id),
            created_at: from_ms(a.int(keys::CREATED_AT).unwrap_or(0)),
            last_current_at: from_ms(a.int(keys::LAST_CURRENT_AT).unwrap_or(0)),
            pinned: self
                .graph
                .out_edges(id, EdgeLabel::ContainsItem)
                .filter(|e| e.attrs.flag(keys::PINNED))
                .map(|e| e.dst.clone())
                .collect(),
        })
    }

    pub fn context_state(&self, id: &NodeId) -> Result<ContextState> {
        let node = self.graph.node(id).filter(|n| n.kind == NodeKind::Context);
        let node = node.ok_or_else(|| Error::UnknownId(id.to_string()))?;
        Ok(node.attrs.str(keys::STATE).and_then(ContextState::parse).unwrap_or(ContextState::Active))
    }

    pub fn context_name(&self, id: &NodeId) -> String {
        self.graph
            .node(id)
            .and_then(|n| n.attrs.str(keys::NAME))
            .unwrap_or_default()
            .to_string()
    }

    /// All contexts (any state), ascending by id.
    pub fn context_ids(&self) -> Vec<NodeId> {
        self.graph.ids_of_kind(NodeKind::Context).cloned().collect()
    }

    pub fn contexts(&self) -> Vec<ContextSpace> {
        self.context_ids().iter().filter_map(|id| self.context(id).ok()).collect()
    }

    /// Contexts in `state`, ascending by id.
    pub fn contexts_in(&self, state: ContextState) -> Vec<NodeId> {
        self.graph
            .ids_of_kind(NodeKind::Context)
            .filter(|id| self.context_state(id).ok() == Some(state))
            .cloned()
            .collect()
    }

    pub fn find_context_by_name(&self, name: &str) -> Option<NodeId> {
        self.graph
            .ids_of_kind(NodeKind::Context)
            .find(|id| {
                self.context_name(id) == name && self.context_state(id).ok() != Some(ContextState::Retracted)
            })
            .cloned()
    }

    pub fn parent_of(&self, ctx: &NodeId) -> Option<NodeId> {
        self.graph.in_edges(ctx, EdgeLabel::HasSubContext).next().map(|e| e.src.clone())
    }

    pub fn children_of(&self, ctx: &NodeId) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self.graph.out_edges(ctx, EdgeLabel::HasSubContext).map(|e| e.dst.clone()).collect();
        v.sort();
        v
    }

    /// Depth in the hierarchy (roots are 0).
    pub fn depth_of(&self, ctx: &NodeId) -> usize {
        let mut depth = 0;
        let mut cur = self.parent_of(ctx);
        while let Some(p) = cur {
            depth += 1;
            if depth > self.graph.count_of_kind(NodeKind::Context) {
                break;
            }
            cur = self.parent_of(&p);
        }
        depth
    }

    pub fn is_ancestor(&self, ancestor: &NodeId, of: &NodeId) -> bool {
        let mut cur = self.parent_of(of);
        let mut steps = 0;
        while let Some(p) = cur {
            if &p == ancestor {
                return true;
            }
            steps += 1;
            if steps > self.graph.count_of_kind(NodeKind::Context) {
                return false;
            }
            cur = self.parent_of(&p);
        }
        false
    }

    /// True when every context has at most one parent and no context is its
    /// own ancestor.
    pub fn hierarchy_is_forest(&self) -> bool {
        let n = self.graph.count_of_kind(NodeKind::Context);
        self.graph.ids_of_kind(NodeKind::Context).all(|id| {
            if self.graph.in_edges(id, EdgeLabel::HasSubContext).count() > 1 {
                return false;
            }
            let mut cur = self.parent_of(id);
            let mut steps = 0;
            while let Some(p) = cur {
                if &p == id || steps > n {
                    return false;
                }
                steps += 1;
                cur = self.parent_of(&p);
            }
            true
        })
    }

    pub fn membership(&self, item: &NodeId, ctx: &NodeId) -> Option<Membership> {
        self.graph.find_edge(ctx, EdgeLabel::ContainsItem, item).map(Membership::from_edge)
    }

    /// Members of `ctx`, ascending by item id.
    pub fn members(&self, ctx: &NodeId) -> Vec<Membership> {
        let mut v: Vec<Membership> =
            self.graph.out_edges(ctx, EdgeLabel::ContainsItem).map(Membership::from_edge).collect();
        v.sort_by(|a, b| a.item.cmp(&b.item));
        v
    }

    pub fn member_count(&self, ctx: &NodeId) -> usize {
        self.graph.out_degree(ctx, EdgeLabel::ContainsItem)
    }

    /// Memberships of `item` across contexts, ascending by context id.
    pub fn memberships_of(&self, item: &NodeId) -> Vec<Membership> {
        let mut v: Vec<Membership> =
            self.graph.in_edges(item, EdgeLabel::ContainsItem).map(Membership::from_edge).collect();
        v.sort_by(|a, b| a.ctx.cmp(&b.ctx));
        v
    }

    pub fn current(&self) -> Option<CurrentContext> {
        let ctx = self.current.clone()?;
        let since = self.graph.node(&ctx)?.attrs.int(keys::CURRENT_SINCE)?;
        Some(CurrentContext { ctx, since: from_ms(since) })
    }

    pub fn current_id(&self) -> Option<&NodeId> {
        self.current.as_ref()
    }

    pub(crate) fn is_current(&self, ctx: &NodeId) -> bool {
        self.current.as_ref() == Some(ctx)
    }

    pub fn create_context(&mut self, name: &str, parent: Option<&NodeId>, now: Timestamp) -> Result<NodeId> {
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::EmptyName);
        }
        if let Some(p) = parent {
            match self.context_state(p) {
                Err(_) => return Err(Error::UnknownParent(p.to_string())),
                Ok(ContextState::Active) => {}
                Ok(_) => return Err(Error::ParentNotActive(p.to_string())),
            }
        }
        let mut b = self.batch(now);
        let id = b.node_id();
        let ms = to_ms(now);
        b.push(Mutation::AddNode {
            id: id.clone(),
            kind: NodeKind::Context,
            attrs: Attrs::new()
                .with(keys::NAME, name)
                .with(keys::STATE, ContextState::Active.as_str())
                .with(keys::CREATED_AT, ms)
                .with(keys::LAST_CURRENT_AT, ms),
        });
        if let Some(p) = parent {
            let eid = b.edge_id();
            b.push(Mutation::AddEdge {
                id: eid,
                src: p.clone(),
                label: EdgeLabel::HasSubContext,
                dst: id.clone(),
                attrs: Attrs::new(),
            });
        }
        self.commit(now, "create_context", b, json!({ "ctx": id, "name": name, "parent": parent }))?;
        Ok(id)
    }

    pub(crate) fn writable_context(&self, ctx: &NodeId) -> Result<()> {
        let state = self.context_state(ctx)?;
        if !state.is_writable() {
            return Err(Error::CtxNotWritable(ctx.to_string()));
        }
        Ok(())
    }

    /// Upserts a membership: strength takes the max, access time refreshes.
    pub(crate) fn push_membership_upsert(
        &self,
        b: &mut Batch,
        ctx: &NodeId,
        item: &NodeId,
        strength: f64,
        origin: Origin,
        now: Timestamp,
    ) -> Membership {
        match self.graph.find_edge(ctx, EdgeLabel::ContainsItem, item) {
            Some(e) => {
                let mut m = Membership::from_edge(e);
                m.strength = m.strength.max(strength);
                if now > m.last_access_at {
                    m.last_access_at = now;
                }
                m.measure = Measure::Keep;
                b.push(Mutation::SetEdgeAttrs {
                    id: e.id.clone(),
                    set: Attrs::new()
                        .with(keys::STRENGTH, m.strength)
                        .with(keys::LAST_ACCESS_AT, to_ms(m.last_access_at)),
                    unset: vec![keys::MEASURE.into()],
                });
                m
            }
            None => {
                let m = Membership {
                    item: item.clone(),
                    ctx: ctx.clone(),
                    strength,
                    origin,
                    created_at: now,
                    last_access_at: now,
                    measure: Measure::Keep,
                    pinned: false,
                };
                let eid = b.edge_id();
                b.push(Mutation::AddEdge {
                    id: eid,
                    src: ctx.clone(),
                    label: EdgeLabel::ContainsItem,
                    dst: item.clone(),
                    attrs: m.to_attrs(),
                });
                m
            }
        }
    }

    pub fn add_item(
        &mut self,
        ctx: &NodeId,
        item: &NodeId,
        strength: f64,
        origin: Origin,
        now: Timestamp,
    ) -> Result<Membership> {
        self.writable_context(ctx)?;
        self.item(item)?;
        check_strength(strength)?;
        let mut b = self.batch(now);
        let m = self.push_membership_upsert(&mut b, ctx, item, strength, origin, now);
        self.commit(
            now,
            "add_item",
            b,
            json!({ "ctx": ctx, "item": item, "strength": m.strength, "origin": origin }),
        )?;
        Ok(m)
    }

    pub fn remove_item(&mut self, ctx: &NodeId, item: &NodeId, now: Timestamp) -> Result<bool> {
        self.context_state(ctx)?;
        let Some(e) = self.graph.find_edge(ctx, EdgeLabel::ContainsItem, item) else {
            return Ok(false);
        };
        let mut b = self.batch(now);
        b.push(Mutation::RemoveEdge { id: e.id.clone() });
        self.commit(now, "remove_item", b, json!({ "ctx": ctx, "item": item }))?;
        Ok(true)
    }

    pub fn set_pinned(&mut self, ctx: &NodeId, item: &NodeId, pinned: bool, now: Timestamp) -> Result<Membership> {
        self.context_state(ctx)?;
        let e = self.graph.find_edge(ctx, EdgeLabel::ContainsItem, item).ok_or_else(|| {
            Error::UnknownMembership { item: item.to_string(), ctx: ctx.to_string() }
        })?;
        let mut m = Membership::from_edge(e);
        let mut b = self.batch(now);
        let (set, unset) = if pinned {
            m.measure = Measure::Keep;
            (Attrs::new().with(keys::PINNED, true), vec![keys::MEASURE.into()])
        } else {
            (Attrs::new(), vec![keys::PINNED.into()])
        };
        b.push(Mutation::SetEdgeAttrs { id: e.id.clone(), set, unset });
        m.pinned = pinned;
        self.commit(now, "pin", b, json!({ "ctx": ctx, "item": item, "pinned": pinned }))?;
        Ok(m)
    }

    pub fn set_current(&mut self, ctx: &NodeId, now: Timestamp) -> Result<(Option<NodeId>, NodeId)> {
        if self.context_state(ctx)? != ContextState::Active {
            return Err(Error::CtxNotActive(ctx.to_string()));
        }
        let old = self.current.clone();
        let ms = to_ms(now);
        let mut b = self.batch(now);
        if let Some(o) = old.as_ref().filter(|o| *o != ctx) {
            b.push(Mutation::SetNodeAttrs {
                id: o.clone(),
                set: Attrs::new(),
                unset: vec![keys::CURRENT_SINCE.into()],
            });
        }
        let mut set = Attrs::new().with(keys::LAST_CURRENT_AT, ms);
        if old.as_ref() != Some(ctx) {
            set.set(keys::CURRENT_SINCE, ms);
        }
        b.push(Mutation::SetNodeAttrs { id: ctx.clone(), set, unset: vec![] });
        let access = AccessEvent { item: None, ctx: ctx.clone(), ts: now, action: AccessAction::SwitchIn };
        let deltas = self.on_context_switch(old.as_ref(), ctx, now)?;
        self.set_event_extra(json!({ "old": old, "new": ctx, "deltas": deltas }));
        self.commit(now, "set_current", b, json!({ "old": old, "new": ctx, "access": access }))?;
        self.current = Some(ctx.clone());
        self.push_access(access);
        Ok((old, ctx.clone()))
    }

    /// Moves every membership of `from` to `to` with the max-strength rule.
    /// Returns (moved as new, combined with existing).
    fn push_move_memberships(&self, b: &mut Batch, from: &NodeId, to: &NodeId) -> (usize, usize) {
        let (mut moved, mut combined) = (0, 0);
        for e in self.graph.out_edges(from, EdgeLabel::ContainsItem) {
            self.push_move_one(b, e, to, &mut moved, &mut combined);
        }
        (moved, combined)
    }

    pub(crate) fn push_move_one(&self, b: &mut Batch, e: &Edge, to: &NodeId, moved: &mut usize, combined: &mut usize) {
        let src = Membership::from_edge(e);
        b.push(Mutation::RemoveEdge { id: e.id.clone() });
        match self.graph.find_edge(to, EdgeLabel::ContainsItem, &e.dst) {
            Some(d) => {
                let dst = Membership::from_edge(d);
                let mut set = Attrs::new()
                    .with(keys::STRENGTH, dst.strength.max(src.strength))
                    .with(keys::LAST_ACCESS_AT, to_ms(dst.last_access_at.max(src.last_access_at)));
                let mut unset = Vec::new();
                if src.pinned {
                    set.set(keys::PINNED, true);
                }
                let measure = dst.measure.min(src.measure);
                if measure == Measure::Keep || src.pinned || dst.pinned {
                    unset.push(keys::MEASURE.into());
                } else {
                    set.set(keys::MEASURE, measure.as_str());
                }
                b.push(Mutation::SetEdgeAttrs { id: d.id.clone(), set, unset });
                *combined += 1;
            }
            None => {
                let eid = b.edge_id();
                let mut m = src;
                m.ctx = to.clone();
                b.push(Mutation::AddEdge {
                    id: eid,
                    src: to.clone(),
                    label: EdgeLabel::ContainsItem,
                    dst: e.dst.clone(),
                    attrs: m.to_attrs(),
                });
                *moved += 1;
            }
        }
    }

    fn push_detach(&self, b: &mut Batch, ctx: &NodeId) {
        if let Some(e) = self.graph.in_edges(ctx, EdgeLabel::HasSubContext).next() {
            b.push(Mutation::RemoveEdge { id: e.id.clone() });
        }
    }

    fn push_reparent_children(&self, b: &mut Batch, ctx: &NodeId, to: Option<&NodeId>, skip: Option<&NodeId>) -> Vec<NodeId> {
        let mut out = Vec::new();
        for e in self.graph.out_edges(ctx, EdgeLabel::HasSubContext) {
            if Some(&e.dst) == skip {
                continue;
            }
            b.push(Mutation::RemoveEdge { id: e.id.clone() });
            if let Some(p) = to {
                let eid = b.edge_id();
                b.push(Mutation::AddEdge {
                    id: eid,
                    src: p.clone(),
                    label: EdgeLabel::HasSubContext,
                    dst: e.dst.clone(),
                    attrs: Attrs::new(),
                });
            }
            out.push(e.dst.clone());
        }
        out
    }

    fn push_state(&self, b: &mut Batch, ctx: &NodeId, state: ContextState) {
        b.push(Mutation::SetNodeAttrs {
            id: ctx.clone(),
            set: Attrs::new().with(keys::STATE, state.as_str()),
            unset: vec![],
        });
    }

    pub fn merge_contexts(&mut self, src: &NodeId, dst: &NodeId, now: Timestamp) -> Result<MergeReport> {
        if src == dst {
            return Err(Error::MergeSelf);
        }
        let src_state = self.context_state(src)?;
        let dst_state = self.context_state(dst)?;
        if self.is_current(src) {
            return Err(Error::SrcIsCurrent(src.to_string()));
        }
        if src_state == ContextState::Retracted {
            return Err(Error::CtxRetracted(src.to_string()));
        }
        if dst_state != ContextState::Active {
            return Err(Error::CtxNotActive(dst.to_string()));
        }
        let mut b = self.batch(now);
        let src_parent = self.parent_of(src);
        // dst below src: lift dst into src's place first so re-parenting
        // src's children under dst cannot form a cycle.
        if self.is_ancestor(src, dst) {
            self.push_detach(&mut b, dst);
            if let Some(p) = &src_parent {
                let eid = b.edge_id();
                b.push(Mutation::AddEdge {
                    id: eid,
                    src: p.clone(),
                    label: EdgeLabel::HasSubContext,
                    dst: dst.clone(),
                    attrs: Attrs::new(),
                });
            }
        }
        let reparented = self.push_reparent_children(&mut b, src, Some(dst), Some(dst));
        let (moved, combined) = self.push_move_memberships(&mut b, src, dst);
        if src_parent.is_some() {
            self.push_detach(&mut b, src);
        }
        self.push_state(&mut b, src, ContextState::Retracted);
        let eid = b.edge_id();
        b.push(Mutation::AddEdge {
            id: eid,
            src: src.clone(),
            label: EdgeLabel::MergedInto,
            dst: dst.clone(),
            attrs: Attrs::new().with(keys::CREATED_AT, to_ms(now)),
        });
        let dst_members = self.member_count(dst) + moved;
        let report = MergeReport { src: src.clone(), dst: dst.clone(), moved, combined, reparented, dst_members };
        self.commit(now, "merge_contexts", b, json!({ "src": src, "dst": dst, "moved": moved, "combined": combined }))?;
        Ok(report)
    }

    pub fn split_context(
        &mut self,
        ctx: &NodeId,
        name_a: &str,
        name_b: &str,
        assignment: &BTreeMap<NodeId, Side>,
        now: Timestamp,
    ) -> Result<(NodeId, NodeId)> {
        let state = self.context_state(ctx)?;
        if state == ContextState::Retracted {
            return Err(Error::CtxRetracted(ctx.to_string()));
        }
        if self.is_current(ctx) {
            return Err(Error::CtxIsCurrent(ctx.to_string()));
        }
        let (name_a, name_b) = (name_a.trim(), name_b.trim());
        if name_a.is_empty() || name_b.is_empty() {
            return Err(Error::EmptyName);
        }
        if name_a == name_b {
            return Err(Error::InvalidArgument("split names must differ".into()));
        }
        let members: Vec<&Edge> = self.graph.out_edges(ctx, EdgeLabel::ContainsItem).collect();
        if let Some(e) = members.iter().find(|e| !assignment.contains_key(&e.dst)) {
            return Err(Error::PartialAssignment(e.dst.to_string()));
        }
        if let Some(extra) = assignment
            .keys()
            .find(|k| self.graph.find_edge(ctx, EdgeLabel::ContainsItem, k).is_none())
        {
            return Err(Error::InvalidArgument(format!("{extra} is not a member of {ctx}")));
        }
        let parent = self.parent_of(ctx);
        let ms = to_ms(now);
        let mut b = self.batch(now);
        let mut new_ids = Vec::with_capacity(2);
        for name in [name_a, name_b] {
            let id = b.node_id();
            b.push(Mutation::AddNode {
                id: id.clone(),
                kind: NodeKind::Context,
                attrs: Attrs::new()
                    .with(keys::NAME, name)
                    .with(keys::STATE, ContextState::Active.as_str())
                    .with(keys::CREATED_AT, ms)
                    .with(keys::LAST_CURRENT_AT, ms),
            });
            if let Some(p) = &parent {
                let eid = b.edge_id();
                b.push(Mutation::AddEdge {
                    id: eid,
                    src: p.clone(),
                    label: EdgeLabel::HasSubContext,
                    dst: id.clone(),
                    attrs: Attrs::new(),
                });
            }
            let eid = b.edge_id();
            b.push(Mutation::AddEdge {
                id: eid,
                src: ctx.clone(),
                label: EdgeLabel::SplitInto,
                dst: id.clone(),
                attrs: Attrs::new(),
            });
            new_ids.push(id);
        }
        let (a, bb) = (new_ids[0].clone(), new_ids[1].clone());
        for e in &members {
            let target = match assignment[&e.dst] {
                Side::A => &a,
                Side::B => &bb,
            };
            b.push(Mutation::RemoveEdge { id: e.id.clone() });
            let eid = b.edge_id();
            b.push(Mutation::AddEdge {
                id: eid,
                src: target.clone(),
                label: EdgeLabel::ContainsItem,
                dst: e.dst.clone(),
                attrs: e.attrs.clone(),
            });
        }
        self.push_reparent_children(&mut b, ctx, parent.as_ref(), None);
        if parent.is_some() {
            self.push_detach(&mut b, ctx);
        }
        self.push_state(&mut b, ctx, ContextState::Retracted);
        self.commit(now, "split_context", b, json!({ "ctx": ctx, "a": a, "b": bb, "name_a": name_a, "name_b": name_b }))?;
        Ok((a, bb))
    }

    pub fn retract_context(&mut self, ctx: &NodeId, now: Timestamp) -> Result<ReassignReport> {
        let state = self.context_state(ctx)?;
        if self.is_current(ctx) {
            return Err(Error::CtxIsCurrent(ctx.to_string()));
        }
        if state == ContextState::Retracted {
            return Err(Error::CtxRetracted(ctx.to_string()));
        }
        let parent = self.parent_of(ctx);
        let mut b = self.batch(now);
        let reparented = self.push_reparent_children(&mut b, ctx, parent.as_ref(), None);
        let mut moved = 0;
        let mut unfiled = Vec::new();
        match &parent {
            Some(p) => {
                let (fresh, combined) = self.push_move_memberships(&mut b, ctx, p);
                moved = fresh + combined;
                self.push_detach(&mut b, ctx);
            }
            None => {
                for e in self.graph.out_edges(ctx, EdgeLabel::ContainsItem) {
                    b.push(Mutation::RemoveEdge { id: e.id.clone() });
                    if self.graph.in_edges(&e.dst, EdgeLabel::ContainsItem).count() == 1 {
                        unfiled.push(e.dst.clone());
                    }
                }
            }
        }
        self.push_state(&mut b, ctx, ContextState::Retracted);
        self.commit(now, "retract_context", b, json!({ "src": ctx, "dst": parent, "retracted": true }))?;
        Ok(ReassignReport { ctx: ctx.clone(), parent, moved, unfiled, reparented })
    }

    /// User-level visibility of a whole context: ACTIVE, HIDDEN or ARCHIVED.
    pub fn set_context_state(&mut self, ctx: &NodeId, state: ContextState, now: Timestamp) -> Result<()> {
        let old = self.context_state(ctx)?;
        if !matches!(state, ContextState::Active | ContextState::Hidden | ContextState::Archived) {
            return Err(Error::InvalidArgument(format!("cannot set state {}", state.as_str())));
        }
        if old == ContextState::Retracted {
            return Err(Error::CtxRetracted(ctx.to_string()));
        }
        if self.is_current(ctx) && state != ContextState::Active {
            return Err(Error::CtxIsCurrent(ctx.to_string()));
        }
        let mut b = self.batch(now);
        self.push_state(&mut b, ctx, state);
        self.commit(now, "set_context_state", b, json!({ "ctx": ctx, "old": old, "new": state }))?;
        Ok(())
    }

    /// Creates an item node, optionally with content and a first membership,
    /// in one commit.
    pub fn create_item(
        &mut self,
        kind: NodeKind,
        attrs: Attrs,
        content: Option<&[u8]>,
        ctx: Option<(&NodeId, f64, Origin)>,
        now: Timestamp,
    ) -> Result<NodeId> {
        if !kind.is_item() {
            return Err(Error::InvalidArgument(format!("{} is not an item kind", kind.as_str())));
        }
        if let Some((c, s, _)) = ctx {
            self.writable_context(c)?;
            check_strength(s)?;
        }
        let mut attrs = attrs;
        if attrs.get(keys::CREATED_AT).is_none() {
            attrs.set(keys::CREATED_AT, to_ms(now));
        }
        let mut hash = None;
        if let Some(bytes) = content {
            let h = self.blobs.put(bytes)?;
            attrs.set(keys::CONTENT_REF, Scalar::from(h.as_str()));
            attrs.set(keys::SIZE, bytes.len() as i64);
            hash = Some(h);
        }
        let mut b = self.batch(now);
        let id = b.node_id();
        b.push(Mutation::AddNode { id: id.clone(), kind, attrs });
        let mut meta = json!({ "item": id, "kind": kind });
        if let Some((c, s, o)) = ctx {
            self.push_membership_upsert(&mut b, c, &id, s, o, now);
            meta["ctx"] = json!(c);
            meta["strength"] = json!(s);
            meta["origin"] = json!(o);
        }
        let message_id = match kind {
            NodeKind::Mail => batch_message_id(&b),
            _ => None,
        };
        self.commit(now, "ingest_item", b, meta)?;
        if let Some(mid) = message_id {
            self.message_ids.insert(mid, id.clone());
        }
        if let Some(h) = hash {
            self.ref_content(&h);
        }
        Ok(id)
    }

    /// Replaces an item's content (a save through a facade).
    pub fn update_content(&mut self, item: &NodeId, bytes: &[u8], now: Timestamp) -> Result<()> {
        let node = self.item(item)?;
        let old = node.attrs.str(keys::CONTENT_REF).map(str::to_string);
        let was_archived = node.attrs.flag(keys::ARCHIVED);
        let h = self.blobs.put(bytes)?;
        let mut b = self.batch(now);
        b.push(Mutation::SetNodeAttrs {
            id: item.clone(),
            set: Attrs::new()
                .with(keys::CONTENT_REF, h.as_str())
                .with(keys::SIZE, bytes.len() as i64)
                .with(keys::MODIFIED_AT, to_ms(now)),
            unset: vec![keys::ARCHIVED.into()],
        });
        self.commit(now, "update_item", b, json!({ "item": item }))?;
        self.ref_content(&h);
        if let Some(o) = old.filter(|_| !was_archived) {
            if self.unref_content(&o) && o != h {
                self.blobs.release(&o)?;
            }
        }
        Ok(())
    }

    /// Moves one membership between contexts (strength preserved, max rule
    /// on collision) and optionally renames the item, in one commit.
    pub fn move_item(
        &mut self,
        item: &NodeId,
        from: &NodeId,
        to: &NodeId,
        rename: Option<&str>,
        now: Timestamp,
    ) -> Result<Membership> {
        self.writable_context(to)?;
        let e = self.graph.find_edge(from, EdgeLabel::ContainsItem, item).ok_or_else(|| {
            Error::UnknownMembership { item: item.to_string(), ctx: from.to_string() }
        })?;
        let mut b = self.batch(now);
        if from != to {
            let (mut moved, mut combined) = (0, 0);
            self.push_move_one(&mut b, e, to, &mut moved, &mut combined);
        }
        if let Some(name) = rename {
            b.push(Mutation::SetNodeAttrs {
                id: item.clone(),
                set: Attrs::new().with(keys::NAME, name),
                unset: vec![],
            });
        }
        self.commit(now, "move_item", b, json!({ "item": item, "from": from, "to": to }))?;
        self.membership(item, to).ok_or_else(|| Error::UnknownId(item.to_string()))
    }
}
