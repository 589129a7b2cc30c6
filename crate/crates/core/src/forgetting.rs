//! Managed forgetting: memory buoyancy, the escalating measures, condensation
//! and stale-context merging, combined into the tidy-up pass.
//!
//! Buoyancy is `strength * 2^(-dt / half_life)` with `dt` in days since the
//! last access. Measures are threshold bands on that score, so severity is
//! monotone in buoyancy by construction. "Adaptive synchronization" shows up
//! as views leaving out every membership flagged HIDE or worse.

use std::cell::RefCell;
use std::collections::BTreeMap;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::clock::{days_between, to_ms, Timestamp};
use crate::context::{ContextState, Membership};
use crate::desk::{keys, Desk};
use crate::error::{Error, Result};
use crate::graph::{Attrs, Edge, EdgeLabel, Mutation, NodeId, NodeKind};
use crate::par::Exec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForgettingPolicy {
    pub half_life_days: f64,
    pub theta_hide: f64,
    pub theta_cond: f64,
    pub theta_arch: f64,
    pub theta_del: f64,
    pub allow_delete: bool,
    pub min_retention_days: f64,
    pub keep_top_k: usize,
}

impl Default for ForgettingPolicy {
    fn default() -> Self {
        ForgettingPolicy {
            half_life_days: 30.0,
            theta_hide: 0.5,
            theta_cond: 0.2,
            theta_arch: 0.1,
            theta_del: 0.05,
            allow_delete: false,
            min_retention_days: 365.0,
            keep_top_k: 5,
        }
    }
}

impl ForgettingPolicy {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadPolicy(m.to_string()));
        if !(self.half_life_days.is_finite() && self.half_life_days > 0.0) {
            return bad("half_life_days must be positive");
        }
        let t = [1.0, self.theta_hide, self.theta_cond, self.theta_arch, self.theta_del, 0.0];
        if !t.windows(2).all(|w| w[0] > w[1]) {
            return bad("thresholds must satisfy 1 > hide > cond > arch > del > 0");
        }
        if !(self.min_retention_days >= 0.0) {
            return bad("min_retention_days must be non-negative");
        }
        if self.keep_top_k < 1 {
            return bad("keep_top_k must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Measure {
    Keep,
    Hide,
    Condense,
    Archive,
    Delete,
}

impl Measure {
    pub const ALL: [Measure; 5] = [Measure::Keep, Measure::Hide, Measure::Condense, Measure::Archive, Measure::Delete];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Keep => "KEEP",
            Measure::Hide => "HIDE",
            Measure::Condense => "CONDENSE",
            Measure::Archive => "ARCHIVE",
            Measure::Delete => "DELETE",
        }
    }

    pub fn parse(s: &str) -> Option<Measure> {
        Measure::ALL.into_iter().find(|m| m.as_str().eq_ignore_ascii_case(s))
    }

    pub fn severity(self) -> u8 {
        self as u8
    }
}

pub fn buoyancy(strength: f64, dt_days: f64, half_life_days: f64) -> f64 {
    strength * (-dt_days / half_life_days).exp2()
}

pub fn memory_buoyancy(m: &Membership, now: Timestamp, policy: &ForgettingPolicy) -> Result<f64> {
    let (now_ms, last) = (to_ms(now), to_ms(m.last_access_at));
    if now_ms < last {
        return Err(Error::ClockSkew(last - now_ms));
    }
    Ok(buoyancy(m.strength, days_between(now_ms, last), policy.half_life_days))
}

pub fn classify_measure(mb: f64, policy: &ForgettingPolicy, pinned: bool) -> Measure {
    if pinned || mb >= policy.theta_hide {
        Measure::Keep
    } else if mb >= policy.theta_cond {
        Measure::Hide
    } else if mb >= policy.theta_arch {
        Measure::Condense
    } else if mb >= policy.theta_del || !policy.allow_delete {
        Measure::Archive
    } else {
        Measure::Delete
    }
}

/// The measure tidy-up wants for a membership. ARCHIVE and DELETE are
/// sticky; HIDE and CONDENSE follow the live score in both directions.
pub fn target_measure(flag: Measure, mb: f64, policy: &ForgettingPolicy, pinned: bool) -> Measure {
    if pinned {
        Measure::Keep
    } else if flag >= Measure::Archive {
        flag
    } else {
        classify_measure(mb, policy, false)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CondensationStub {
    pub id: NodeId,
    pub ctx: NodeId,
    pub kept: Vec<NodeId>,
    pub removed_items: Vec<NodeId>,
    pub counts: BTreeMap<String, usize>,
    pub created_at: Timestamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Measure,
    Condense,
    Merge,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReorgAction {
    pub kind: ActionKind,
    pub ctx: NodeId,
    pub item: Option<NodeId>,
    pub old: String,
    pub new: String,
    pub reason: String,
    pub mb: Option<f64>,
    pub dst: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReorgFailure {
    pub target: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReorgReport {
    pub now: Timestamp,
    pub dry_run: bool,
    pub actions: Vec<ReorgAction>,
    pub failures: Vec<ReorgFailure>,
}

impl ReorgReport {
    pub fn count(&self, new: Measure) -> usize {
        self.actions.iter().filter(|a| a.kind == ActionKind::Measure && a.new == new.as_str()).count()
    }

    pub fn finds(&self, ctx: &NodeId, item: &NodeId) -> Option<&ReorgAction> {
        self.actions.iter().find(|a| &a.ctx == ctx && a.item.as_ref() == Some(item))
    }
}

/// How the tidy-up pass reaches the desk: one short read or write per step,
/// so other writers interleave between actions.
pub trait DeskAccess {
    fn read<R>(&self, f: impl FnOnce(&Desk) -> R) -> R;
    fn write<R>(&self, f: impl FnOnce(&mut Desk) -> R) -> R;
}

impl DeskAccess for RwLock<Desk> {
    fn read<R>(&self, f: impl FnOnce(&Desk) -> R) -> R {
        f(&self.read())
    }

    fn write<R>(&self, f: impl FnOnce(&mut Desk) -> R) -> R {
        f(&mut self.write())
    }
}

struct Solo<'a>(RefCell<&'a mut Desk>);

impl DeskAccess for Solo<'_> {
    fn read<R>(&self, f: impl FnOnce(&Desk) -> R) -> R {
        f(&self.0.borrow())
    }

    fn write<R>(&self, f: impl FnOnce(&mut Desk) -> R) -> R {
        f(&mut self.0.borrow_mut())
    }
}

/// One scored membership.
#[derive(Clone, Debug, PartialEq)]
pub struct Score {
    pub ctx: NodeId,
    pub item: NodeId,
    pub mb: Result<f64, i64>,
    pub flag: Measure,
    pub target: Measure,
}

fn score_edge(e: &Edge, now_ms: i64, policy: &ForgettingPolicy) -> Score {
    let a = &e.attrs;
    let strength = a.float(keys::STRENGTH).unwrap_or(1.0);
    let last = Membership::last_access_ms(e);
    let flag = a.str(keys::MEASURE).and_then(Measure::parse).unwrap_or(Measure::Keep);
    let pinned = a.flag(keys::PINNED);
    let mb = if now_ms < last {
        Err(last - now_ms)
    } else {
        Ok(buoyancy(strength, days_between(now_ms, last), policy.half_life_days))
    };
    let target = match mb {
        Ok(mb) => target_measure(flag, mb, policy, pinned),
        Err(_) => flag,
    };
    Score { ctx: e.src.clone(), item: e.dst.clone(), mb, flag, target }
}

/// Scores every membership outside the current context.
pub fn score_all(desk: &Desk, now: Timestamp, exec: Exec) -> Vec<Score> {
    let policy = desk.policy();
    let current = desk.current_id();
    let edges: Vec<&Edge> = desk
        .graph
        .edges()
        .filter(|e| e.label == EdgeLabel::ContainsItem && Some(&e.src) != current)
        .collect();
    let now_ms = to_ms(now);
    let mut out = exec.map(&edges, |e| score_edge(e, now_ms, policy));
    out.sort_by(|a, b| (&a.ctx, &a.item).cmp(&(&b.ctx, &b.item)));
    out
}

const MAX_ROUNDS: usize = 8;

/// Runs tidy-up rounds until one produces no action. Each round applies
/// membership measures, condenses contexts whose members are mostly
/// CONDENSE or worse, then merges stale sub-contexts into their parents.
pub fn tidy_up(access: &impl DeskAccess, now: Timestamp, exec: Exec, dry_run: bool) -> Result<ReorgReport> {
    let mut report = ReorgReport { now, dry_run, actions: Vec::new(), failures: Vec::new() };
    for _ in 0..MAX_ROUNDS {
        let before = report.actions.len();
        measure_pass(access, now, exec, &mut report)?;
        condense_pass(access, now, &mut report)?;
        merge_pass(access, now, &mut report)?;
        if report.actions.len() == before {
            break;
        }
    }
    report.actions.sort_by(|a, b| (&a.ctx, &a.item).cmp(&(&b.ctx, &b.item)));
    let summary: BTreeMap<&str, usize> = Measure::ALL.iter().map(|m| (m.as_str(), report.count(*m))).collect();
    access.write(|d| {
        d.set_event_extra(json!({ "report": report }));
        let b = d.batch(now);
        d.commit(now, "tidyup_report", b, json!({ "actions": report.actions.len(), "measures": summary }))
    })?;
    Ok(report)
}

fn measure_pass(access: &impl DeskAccess, now: Timestamp, exec: Exec, report: &mut ReorgReport) -> Result<()> {
    let candidates: Vec<Score> = access.read(|d| {
        score_all(d, now, exec).into_iter().filter(|s| s.mb.is_err() || s.target != s.flag).collect()
    });
    for s in candidates {
        if let Err(skew) = s.mb {
            report.failures.push(ReorgFailure {
                target: format!("{}/{}", s.ctx, s.item),
                error: Error::ClockSkew(skew).to_string(),
            });
            continue;
        }
        match access.write(|d| d.apply_measure(&s.ctx, &s.item, now)) {
            Ok(Some(a)) => report.actions.push(a),
            Ok(None) => {}
            Err(e) => report.failures.push(ReorgFailure { target: format!("{}/{}", s.ctx, s.item), error: e.to_string() }),
        }
    }
    Ok(())
}

fn condense_pass(access: &impl DeskAccess, now: Timestamp, report: &mut ReorgReport) -> Result<()> {
    let candidates: Vec<NodeId> =
        access.read(|d| d.context_ids().into_iter().filter(|c| d.wants_condense(c)).collect());
    for ctx in candidates {
        let res = access.write(|d| {
            if !d.wants_condense(&ctx) {
                return Ok(None);
            }
            let (flagged, total) = d.flagged_share(&ctx);
            let old = d.context_state(&ctx)?;
            let stub = d.condense_context(&ctx, now)?;
            Ok::<_, Error>(Some(ReorgAction {
                kind: ActionKind::Condense,
                ctx: ctx.clone(),
                item: None,
                old: old.as_str().into(),
                new: ContextState::Condensed.as_str().into(),
                reason: format!("{flagged}/{total} members CONDENSE or worse, {} removed", stub.removed_items.len()),
                mb: None,
                dst: None,
            }))
        });
        match res {
            Ok(Some(a)) => report.actions.push(a),
            Ok(None) => {}
            Err(e) => report.failures.push(ReorgFailure { target: ctx.to_string(), error: e.to_string() }),
        }
    }
    Ok(())
}

fn merge_pass(access: &impl DeskAccess, now: Timestamp, report: &mut ReorgReport) -> Result<()> {
    let stale = access.read(|d| d.stale_contexts(now));
    for (src, cb) in stale {
        let res = access.write(|d| {
            let Some(dst) = d.parent_of(&src) else { return Ok(None) };
            let movable = !d.is_current(&src) && d.context_state(&src)? != ContextState::Retracted;
            let target_ok = d.context_state(&dst)? == ContextState::Active && !d.is_current(&dst);
            if !movable || !target_ok {
                return Ok(None);
            }
            let old = d.context_state(&src)?;
            d.merge_contexts(&src, &dst, now)?;
            Ok::<_, Error>(Some(ReorgAction {
                kind: ActionKind::Merge,
                ctx: src.clone(),
                item: None,
                old: old.as_str().into(),
                new: ContextState::Retracted.as_str().into(),
                reason: format!("context buoyancy {cb:.4} below theta_cond, merged into parent"),
                mb: Some(cb),
                dst: Some(dst),
            }))
        });
        match res {
            Ok(Some(a)) => report.actions.push(a),
            Ok(None) => {}
            Err(e) => report.failures.push(ReorgFailure { target: src.to_string(), error: e.to_string() }),
        }
    }
    Ok(())
}

impl Desk {
    pub fn memory_buoyancy(&self, m: &Membership, now: Timestamp) -> Result<f64> {
        memory_buoyancy(m, now, self.policy())
    }

    /// Buoyancy with clock skew read as "accessed just now".
    fn mb_lenient(&self, m: &Membership, now: Timestamp) -> f64 {
        self.memory_buoyancy(m, now).unwrap_or(m.strength)
    }

    pub fn context_buoyancy(&self, ctx: &NodeId, now: Timestamp) -> Result<f64> {
        let c = self.context(ctx)?;
        if c.state == ContextState::Retracted {
            return Err(Error::CtxRetracted(ctx.to_string()));
        }
        let h = self.policy().half_life_days;
        let since = days_between(to_ms(now), to_ms(c.last_current_at)).max(0.0);
        let own = buoyancy(1.0, since, h);
        Ok(self.members(ctx).iter().map(|m| self.mb_lenient(m, now)).fold(own, f64::max))
    }

    fn flagged_share(&self, ctx: &NodeId) -> (usize, usize) {
        let members = self.members(ctx);
        (members.iter().filter(|m| m.measure >= Measure::Condense).count(), members.len())
    }

    fn wants_condense(&self, ctx: &NodeId) -> bool {
        let state_ok = matches!(self.context_state(ctx), Ok(ContextState::Active | ContextState::Hidden));
        let (flagged, total) = self.flagged_share(ctx);
        state_ok && !self.is_current(ctx) && flagged * 2 > total
    }

    /// Stale sub-contexts with their buoyancy, deepest first.
    pub fn stale_contexts(&self, now: Timestamp) -> Vec<(NodeId, f64)> {
        let theta = self.policy().theta_cond;
        let mut stale: Vec<(usize, NodeId, f64)> = self
            .context_ids()
            .into_iter()
            .filter(|c| !self.is_current(c) && self.parent_of(c).is_some())
            .filter_map(|c| {
                let cb = self.context_buoyancy(&c, now).ok()?;
                (cb < theta).then(|| (self.depth_of(&c), c, cb))
            })
            .collect();
        stale.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        stale.into_iter().map(|(_, c, cb)| (c, cb)).collect()
    }

    /// Merges every stale sub-context into its parent, deepest first.
    pub fn merge_stale(&mut self, now: Timestamp) -> Result<Vec<(NodeId, NodeId)>> {
        let mut report = ReorgReport { now, dry_run: false, actions: Vec::new(), failures: Vec::new() };
        merge_pass(&Solo(RefCell::new(self)), now, &mut report)?;
        Ok(report.actions.into_iter().filter_map(|a| Some((a.ctx, a.dst?))).collect())
    }

    pub fn condense_context(&mut self, ctx: &NodeId, now: Timestamp) -> Result<CondensationStub> {
        let state = self.context_state(ctx)?;
        if self.is_current(ctx) {
            return Err(Error::CtxIsCurrent(ctx.to_string()));
        }
        if !matches!(state, ContextState::Active | ContextState::Hidden) {
            return Err(Error::InvalidArgument(format!("a {} context cannot be condensed", state.as_str())));
        }
        let members = self.members(ctx);
        let (pinned, mut rest): (Vec<&Membership>, Vec<&Membership>) = members.iter().partition(|m| m.pinned);
        let mut scored: Vec<(f64, &Membership)> = rest.drain(..).map(|m| (self.mb_lenient(m, now), m)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.item.cmp(&b.1.item)));
        let k = self.policy().keep_top_k.min(scored.len());
        let mut kept: Vec<NodeId> = pinned.iter().map(|m| m.item.clone()).collect();
        kept.extend(scored[..k].iter().map(|(_, m)| m.item.clone()));
        kept.sort();
        let mut removed: Vec<NodeId> = scored[k..].iter().map(|(_, m)| m.item.clone()).collect();
        removed.sort();

        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut b = self.batch(now);
        let stub = b.node_id();
        let mut attrs = Attrs::new()
            .with(keys::NAME, format!("condensed {}", self.context_name(ctx)))
            .with(keys::CTX, ctx.as_str())
            .with(keys::REMOVED, removed.iter().map(NodeId::as_str).collect::<Vec<_>>().join(" "))
            .with(keys::CREATED_AT, to_ms(now));
        for item in &removed {
            let kind = self.graph.node(item).map(|n| n.kind.as_str()).unwrap_or("UNKNOWN");
            *counts.entry(kind.to_string()).or_default() += 1;
        }
        for (kind, n) in &counts {
            attrs.set(&format!("count_{}", kind.to_ascii_lowercase()), *n as i64);
        }
        b.push(Mutation::AddNode { id: stub.clone(), kind: NodeKind::Stub, attrs });
        let eid = b.edge_id();
        b.push(Mutation::AddEdge { id: eid, src: stub.clone(), label: EdgeLabel::IsPartOf, dst: ctx.clone(), attrs: Attrs::new() });
        for item in &removed {
            if let Some(e) = self.graph.find_edge(ctx, EdgeLabel::ContainsItem, item) {
                b.push(Mutation::RemoveEdge { id: e.id.clone() });
            }
            let eid = b.edge_id();
            b.push(Mutation::AddEdge {
                id: eid,
                src: item.clone(),
                label: EdgeLabel::CondensedInto,
                dst: stub.clone(),
                attrs: Attrs::new(),
            });
        }
        b.push(Mutation::SetNodeAttrs {
            id: ctx.clone(),
            set: Attrs::new().with(keys::STATE, ContextState::Condensed.as_str()),
            unset: vec![],
        });
        self.commit(now, "condense", b, json!({ "ctx": ctx, "stub": stub, "kept": kept, "removed": removed }))?;
        Ok(CondensationStub { id: stub, ctx: ctx.clone(), kept, removed_items: removed, counts, created_at: now })
    }

    /// Brings one membership to the measure tidy-up wants for it, as one
    /// commit. Returns None when nothing changes or the membership is
    /// exempt (current context) or gone.
    pub(crate) fn apply_measure(&mut self, ctx: &NodeId, item: &NodeId, now: Timestamp) -> Result<Option<ReorgAction>> {
        if self.is_current(ctx) {
            return Ok(None);
        }
        let Some(e) = self.graph.find_edge(ctx, EdgeLabel::ContainsItem, item) else { return Ok(None) };
        let m = Membership::from_edge(e);
        let mb = self.memory_buoyancy(&m, now)?;
        let policy = self.policy().clone();
        let mut target = target_measure(m.measure, mb, &policy, m.pinned);
        if target == Measure::Delete && !self.may_delete(item, now) {
            target = Measure::Archive;
        }
        if target == m.measure {
            return Ok(None);
        }
        let action = ReorgAction {
            kind: ActionKind::Measure,
            ctx: ctx.clone(),
            item: Some(item.clone()),
            old: m.measure.as_str().into(),
            new: target.as_str().into(),
            reason: format!("buoyancy {mb:.4}"),
            mb: Some(mb),
            dst: None,
        };
        if target == Measure::Delete {
            self.delete_item(item, now)?;
            return Ok(Some(action));
        }
        let edge_id = e.id.clone();
        let node = self.item(item)?;
        let content = node.attrs.str(keys::CONTENT_REF).map(str::to_string);
        let was_archived = node.attrs.flag(keys::ARCHIVED);
        let others_live = self
            .memberships_of(item)
            .iter()
            .any(|o| &o.ctx != ctx && o.measure < Measure::Archive);
        let archive_item = target == Measure::Archive && !others_live && !was_archived;
        let restore_item = target < Measure::Archive && was_archived;

        let mut b = self.batch(now);
        let (set, unset) = match target {
            Measure::Keep => (Attrs::new(), vec![keys::MEASURE.into()]),
            t => (Attrs::new().with(keys::MEASURE, t.as_str()), vec![]),
        };
        b.push(Mutation::SetEdgeAttrs { id: edge_id, set, unset });
        if archive_item {
            b.push(Mutation::SetNodeAttrs { id: item.clone(), set: Attrs::new().with(keys::ARCHIVED, true), unset: vec![] });
        }
        if restore_item {
            b.push(Mutation::SetNodeAttrs { id: item.clone(), set: Attrs::new(), unset: vec![keys::ARCHIVED.into()] });
        }
        self.commit(
            now,
            "measure",
            b,
            json!({ "ctx": ctx, "item": item, "old": m.measure, "new": target, "mb": mb }),
        )?;
        if let Some(hash) = content {
            if archive_item {
                let path = format!("/{}/{}", self.context_name(ctx), self.node(item)?.attrs.str(keys::NAME).unwrap_or(""));
                let last = self.unref_content(&hash);
                self.blobs.archive(item, &hash, &path, last)?;
            } else if restore_item {
                if let Some(bytes) = self.blobs.get(&hash)? {
                    self.blobs.put(&bytes)?;
                }
                self.ref_content(&hash);
            }
        }
        Ok(Some(action))
    }

    /// Deletion is double-gated: policy must allow it, the item must be
    /// older than the retention floor, and every membership must be due
    /// for deletion outside the current context.
    fn may_delete(&self, item: &NodeId, now: Timestamp) -> bool {
        let policy = self.policy();
        if !policy.allow_delete {
            return false;
        }
        let Ok(node) = self.item(item) else { return false };
        let created = node.attrs.int(keys::CREATED_AT).unwrap_or(0);
        if days_between(to_ms(now), created) <= policy.min_retention_days {
            return false;
        }
        self.memberships_of(item).iter().all(|m| {
            !self.is_current(&m.ctx)
                && !m.pinned
                && self.memory_buoyancy(m, now).is_ok_and(|mb| classify_measure(mb, policy, false) == Measure::Delete)
        })
    }

    fn delete_item(&mut self, item: &NodeId, now: Timestamp) -> Result<()> {
        let node = self.item(item)?;
        let content = node.attrs.str(keys::CONTENT_REF).map(str::to_string);
        let archived = node.attrs.flag(keys::ARCHIVED);
        let mut b = self.batch(now);
        b.push(Mutation::RemoveNode { id: item.clone() });
        self.commit(now, "delete_item", b, json!({ "item": item }))?;
        if let Some(h) = content.filter(|_| !archived) {
            if self.unref_content(&h) {
                self.blobs.release(&h)?;
            }
        }
        self.message_ids.retain(|_, v| v != item);
        Ok(())
    }

    pub fn tidy_up(&mut self, now: Timestamp) -> Result<ReorgReport> {
        tidy_up(&Solo(RefCell::new(self)), now, Exec::default(), false)
    }

    /// The report tidy-up would produce, computed on a detached copy.
    pub fn preview_tidy_up(&self, now: Timestamp) -> Result<ReorgReport> {
        let mut scratch = self.scratch();
        tidy_up(&Solo(RefCell::new(&mut scratch)), now, Exec::default(), true)
    }
}
