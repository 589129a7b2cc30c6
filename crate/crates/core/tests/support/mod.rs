//! Randomized desk workloads and independent invariant checks, shared by the
//! property tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use cspaces_core::clock::{parse_ts, plus_days, Timestamp};
use cspaces_core::context::Side;
use cspaces_core::desk::keys;
use cspaces_core::graph::{Attrs, EdgeLabel, NodeId, NodeKind};
use cspaces_core::{ContextState, Desk, DeskConfig, Origin};

pub fn t0() -> Timestamp {
    parse_ts("2024-01-08T09:00:00Z").unwrap()
}

pub fn desk() -> Desk {
    Desk::in_memory(DeskConfig::default()).unwrap()
}

/// MB computed independently of the engine: s·e^(−ln2·Δt/h).
pub fn mb_oracle(strength: f64, dt_days: f64, half_life_days: f64) -> f64 {
    strength * (-std::f64::consts::LN_2 * dt_days / half_life_days).exp()
}

pub fn strength(rng: &mut impl Rng) -> f64 {
    // quantized so max() comparisons are exact
    f64::from(rng.gen_range(1..=20u32)) / 20.0
}

pub struct Population {
    pub items: Vec<NodeId>,
    pub contexts: Vec<NodeId>,
}

/// Contexts form a random forest; each item gets 0 to 3 memberships.
pub fn populate(rng: &mut impl Rng, desk: &mut Desk, n_items: usize, n_ctx: usize, now: Timestamp) -> Population {
    let mut contexts: Vec<NodeId> = Vec::with_capacity(n_ctx);
    for i in 0..n_ctx {
        let parent = (!contexts.is_empty() && rng.gen_bool(0.5)).then(|| contexts[rng.gen_range(0..contexts.len())].clone());
        contexts.push(desk.create_context(&format!("c{i}"), parent.as_ref(), now).unwrap());
    }
    let mut items = Vec::with_capacity(n_items);
    for i in 0..n_items {
        let n_members = [0, 1, 1, 1, 2, 2, 3][rng.gen_range(0..7)];
        let mut homes: Vec<&NodeId> = contexts.choose_multiple(rng, n_members).collect();
        let first = homes.pop().map(|c| (c, strength(rng), Origin::User));
        let attrs = Attrs::new().with(keys::NAME, format!("item-{i}.txt"));
        let item = desk.create_item(NodeKind::File, attrs, None, first, now).unwrap();
        for c in homes {
            desk.add_item(c, &item, strength(rng), Origin::User, now).unwrap();
        }
        if rng.gen_bool(0.1) {
            if let Some(m) = desk.memberships_of(&item).first() {
                desk.set_pinned(&m.ctx, &item, true, now).unwrap();
            }
        }
        items.push(item);
    }
    Population { items, contexts }
}

/// Parent walk over raw `hasSubContext` edges, independent of the engine's
/// own forest check.
pub fn check_forest(desk: &Desk) -> Result<(), String> {
    let g = desk.graph();
    let ctxs: Vec<&NodeId> = g.ids_of_kind(NodeKind::Context).collect();
    let mut parent: BTreeMap<&NodeId, &NodeId> = BTreeMap::new();
    for c in &ctxs {
        let ps: Vec<_> = g.in_edges(c, EdgeLabel::HasSubContext).collect();
        if ps.len() > 1 {
            return Err(format!("{c} has {} parents", ps.len()));
        }
        if let Some(e) = ps.first() {
            parent.insert(c, &e.src);
        }
    }
    for c in &ctxs {
        let mut seen = BTreeSet::new();
        let mut cur = *c;
        while let Some(p) = parent.get(cur) {
            if !seen.insert(*p) || p == c {
                return Err(format!("cycle through {c}"));
            }
            cur = p;
        }
    }
    if !desk.hierarchy_is_forest() {
        return Err("engine forest check disagrees".into());
    }
    Ok(())
}

/// Every original item still exists and is filed somewhere or listed as
/// unfiled; retracted contexts hold nothing; no edge dangles.
pub fn check_conservation(desk: &Desk, items: &[NodeId]) -> Result<(), String> {
    let unfiled: BTreeSet<NodeId> = desk.unfiled().into_iter().collect();
    for item in items {
        if !desk.graph().contains_node(item) {
            return Err(format!("item {item} vanished"));
        }
        let filed = !desk.memberships_of(item).is_empty();
        if filed == unfiled.contains(item) {
            return Err(format!("item {item}: filed={filed}, listed unfiled={}", unfiled.contains(item)));
        }
    }
    let count = desk.graph().nodes().filter(|n| n.kind == NodeKind::File).count();
    if count != items.len() {
        return Err(format!("{count} items, expected {}", items.len()));
    }
    for c in desk.contexts_in(ContextState::Retracted) {
        if desk.member_count(&c) != 0 {
            return Err(format!("retracted {c} still has members"));
        }
    }
    if !desk.graph().check_no_dangling() {
        return Err("dangling edge".into());
    }
    Ok(())
}

type Strengths = BTreeMap<NodeId, (f64, bool)>;

fn strengths(desk: &Desk, ctx: &NodeId) -> Strengths {
    desk.members(ctx).into_iter().map(|m| (m.item, (m.strength, m.pinned))).collect()
}

fn expect_max_rule(desk: &Desk, from: &Strengths, before_dst: &Strengths, dst: &NodeId) -> Result<(), String> {
    let after = strengths(desk, dst);
    let mut expected = before_dst.clone();
    for (item, (s, p)) in from {
        let e = expected.entry(item.clone()).or_insert((0.0, false));
        *e = (e.0.max(*s), e.1 || *p);
    }
    for (item, (s, p)) in &expected {
        match after.get(item) {
            Some((got, gp)) if got == s && gp == p => {}
            Some(got) => return Err(format!("{item} in {dst}: got {got:?}, expected ({s}, {p})")),
            None => return Err(format!("{item} missing from {dst}")),
        }
    }
    if after.len() != expected.len() {
        return Err(format!("{dst} has {} members, expected {}", after.len(), expected.len()));
    }
    Ok(())
}

fn live(desk: &Desk) -> Vec<NodeId> {
    desk.context_ids()
        .into_iter()
        .filter(|c| desk.context_state(c).ok() != Some(ContextState::Retracted) && desk.current_id() != Some(c))
        .collect()
}

/// One random merge, split or retract with its pointwise postconditions.
/// Returns the op name, or `None` when no context qualifies.
pub fn reorg_step(rng: &mut impl Rng, desk: &mut Desk, now: Timestamp) -> Result<Option<&'static str>, String> {
    let candidates = live(desk);
    if candidates.is_empty() {
        return Ok(None);
    }
    let ctx = candidates.choose(rng).unwrap().clone();
    match rng.gen_range(0..10) {
        0..=3 => {
            let dsts: Vec<&NodeId> = candidates
                .iter()
                .filter(|d| **d != ctx && desk.context_state(d).ok() == Some(ContextState::Active))
                .collect();
            let Some(dst) = dsts.choose(rng).map(|d| (*d).clone()) else { return Ok(None) };
            let (from, before) = (strengths(desk, &ctx), strengths(desk, &dst));
            let children: Vec<NodeId> = desk.children_of(&ctx).into_iter().filter(|c| *c != dst).collect();
            desk.merge_contexts(&ctx, &dst, now).map_err(|e| format!("merge: {e}"))?;
            expect_max_rule(desk, &from, &before, &dst)?;
            if desk.graph().find_edge(&ctx, EdgeLabel::MergedInto, &dst).is_none() {
                return Err("no mergedInto edge".into());
            }
            if let Some(c) = children.iter().find(|c| desk.parent_of(c).as_ref() != Some(&dst)) {
                return Err(format!("child {c} not re-parented to {dst}"));
            }
            Ok(Some("merge"))
        }
        4..=6 => {
            let before = strengths(desk, &ctx);
            let assignment: BTreeMap<NodeId, Side> =
                before.keys().map(|i| (i.clone(), if rng.gen_bool(0.5) { Side::A } else { Side::B })).collect();
            let (a, b) = desk.split_context(&ctx, "left", "right", &assignment, now).map_err(|e| format!("split: {e}"))?;
            let (sa, sb) = (strengths(desk, &a), strengths(desk, &b));
            let mut union = sa.clone();
            union.extend(sb.clone());
            if union != before || sa.len() + sb.len() != before.len() {
                return Err("split members differ from the original".into());
            }
            if let Some((i, _)) = sa.iter().find(|(i, _)| assignment[*i] != Side::A) {
                return Err(format!("{i} landed on the wrong side"));
            }
            Ok(Some("split"))
        }
        _ => {
            let parent = desk.parent_of(&ctx);
            let from = strengths(desk, &ctx);
            let before = parent.as_ref().map(|p| strengths(desk, p));
            let others: BTreeMap<NodeId, usize> =
                from.keys().map(|i| (i.clone(), desk.memberships_of(i).len() - 1)).collect();
            let report = desk.retract_context(&ctx, now).map_err(|e| format!("retract: {e}"))?;
            match (&parent, before) {
                (Some(p), Some(before)) => expect_max_rule(desk, &from, &before, p)?,
                _ => {
                    let expected: BTreeSet<&NodeId> = others.iter().filter(|(_, n)| **n == 0).map(|(i, _)| i).collect();
                    let got: BTreeSet<&NodeId> = report.unfiled.iter().collect();
                    if got != expected {
                        return Err(format!("unfiled {got:?}, expected {expected:?}"));
                    }
                }
            }
            Ok(Some("retract"))
        }
    }
}

fn mail(i: usize, reply_to: Option<usize>) -> Vec<u8> {
    let reply = reply_to.map_or(String::new(), |r| format!("In-Reply-To: <m{r}@x.org>\r\n"));
    format!("Message-ID: <m{i}@x.org>\r\n{reply}From: a@x.org\r\nTo: b@y.org\r\nSubject: s{i}\r\nDate: Mon, 1 Jan 2024 10:00:00 +0000\r\n\r\nbody {i}\r\n")
        .into_bytes()
}

/// Applies random operations until `n` commits exist; precondition failures
/// are expected and skipped. Returns the final virtual time.
pub fn random_commits(rng: &mut impl Rng, desk: &mut Desk, n: u64, mut now: Timestamp) -> Timestamp {
    let mut mails = 0;
    while desk.seq() < n {
        now = plus_days(now, rng.gen_range(0.0..2.0));
        let ctxs = desk.context_ids();
        let mut items: Vec<NodeId> = desk.graph().nodes().filter(|n| n.kind.is_item()).map(|n| n.id.clone()).collect();
        items.sort();
        let pick_ctx = |rng: &mut dyn rand::RngCore| ctxs.choose(rng).cloned();
        let _ = match rng.gen_range(0..16) {
            0 | 1 => {
                let parent = if rng.gen_bool(0.4) { pick_ctx(rng) } else { None };
                desk.create_context(&format!("ctx{}", desk.seq()), parent.as_ref(), now).map(drop)
            }
            2..=4 => {
                let home = pick_ctx(rng);
                let s = strength(rng);
                let content = format!("content {}", desk.seq());
                let attrs = Attrs::new().with(keys::NAME, format!("f{}.txt", desk.seq()));
                desk.create_item(NodeKind::File, attrs, Some(content.as_bytes()), home.as_ref().map(|c| (c, s, Origin::User)), now).map(drop)
            }
            5 => match (pick_ctx(rng), items.choose(rng)) {
                (Some(c), Some(i)) => desk.add_item(&c, i, strength(rng), Origin::Inferred, now).map(drop),
                _ => Ok(()),
            },
            6 => match items.choose(rng).and_then(|i| desk.memberships_of(i).first().cloned()) {
                Some(m) => desk.remove_item(&m.ctx, &m.item, now).map(drop),
                None => Ok(()),
            },
            7 => match items.choose(rng).and_then(|i| desk.memberships_of(i).first().cloned()) {
                Some(m) => desk.touch(&m.item, &m.ctx, now).map(drop),
                None => Ok(()),
            },
            8 => match items.choose(rng).and_then(|i| desk.memberships_of(i).first().cloned()) {
                Some(m) => desk.set_pinned(&m.ctx, &m.item, !m.pinned, now).map(drop),
                None => Ok(()),
            },
            9 => match pick_ctx(rng) {
                Some(c) => desk.set_current(&c, now).map(drop),
                None => Ok(()),
            },
            10 => match pick_ctx(rng) {
                Some(c) => {
                    let s = [ContextState::Active, ContextState::Hidden, ContextState::Archived][rng.gen_range(0..3)];
                    desk.set_context_state(&c, s, now)
                }
                None => Ok(()),
            },
            11 => match (pick_ctx(rng), pick_ctx(rng)) {
                (Some(a), Some(b)) => desk.merge_contexts(&a, &b, now).map(drop),
                _ => Ok(()),
            },
            12 => match pick_ctx(rng) {
                Some(c) => {
                    let assignment = desk.members(&c).into_iter().map(|m| (m.item, if rng.gen_bool(0.5) { Side::A } else { Side::B })).collect();
                    desk.split_context(&c, "a", "b", &assignment, now).map(drop)
                }
                None => Ok(()),
            },
            13 => match pick_ctx(rng) {
                Some(c) if rng.gen_bool(0.5) => desk.retract_context(&c, now).map(drop),
                _ => items.choose(rng).map_or(Ok(()), |i| desk.update_content(i, format!("v{}", desk.seq()).as_bytes(), now)),
            },
            14 => {
                let reply = (mails > 0 && rng.gen_bool(0.5)).then(|| rng.gen_range(0..mails));
                let home = pick_ctx(rng);
                mails += 1;
                desk.ingest_mail(&mail(mails - 1, reply), home.as_ref(), now).map(drop)
            }
            _ => {
                now = plus_days(now, rng.gen_range(0.0..90.0));
                desk.tidy_up(now).map(drop)
            }
        };
    }
    now
}
