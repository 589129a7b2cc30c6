//! Low-effort association: replies follow their thread's contexts, items
//! opened repeatedly inside a context get proposed for it, and touching a
//! membership reinforces it.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::clock::{to_ms, Timestamp};
use crate::context::{ContextState, Membership, Origin};
use crate::desk::{keys, Desk};
use crate::error::{Error, Result};
use crate::forgetting::Measure;
use crate::graph::{Attrs, EdgeLabel, Mutation, NodeId, NodeKind};
use crate::mail::{parse_header, MailHeader};

pub const REPLY_DECAY: f64 = 0.9;
pub const COACCESS_STRENGTH: f64 = 0.3;
pub const TOUCH_STEP: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ApplyMode {
    Auto,
    Suggest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Rule {
    Reply,
    Coaccess,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ProposalStatus {
    Pending,
    Accepted,
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    /// Derived from rule, context and item, so re-inference cannot duplicate.
    pub id: String,
    pub item: NodeId,
    pub ctx: NodeId,
    pub strength: f64,
    pub rule: Rule,
    pub status: ProposalStatus,
}

impl Proposal {
    pub fn new(item: NodeId, ctx: NodeId, strength: f64, rule: Rule) -> Proposal {
        let tag = match rule {
            Rule::Reply => "reply",
            Rule::Coaccess => "coaccess",
        };
        Proposal { id: format!("{tag}-{ctx}-{item}"), item, ctx, strength, rule, status: ProposalStatus::Pending }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AccessAction {
    Open,
    Save,
    SwitchIn,
}

/// One observed access. `ctx` is the context that was current when the
/// access happened (for SWITCH_IN, the context switched to).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccessEvent {
    pub item: Option<NodeId>,
    pub ctx: NodeId,
    pub ts: Timestamp,
    pub action: AccessAction,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ApplyOutcome {
    pub applied: usize,
    pub stale: Vec<String>,
}

/// Co-access rule: an (item, ctx) pair qualifies once `min_count` OPEN or
/// SAVE events for the item fall inside one `window_minutes` span while ctx
/// was current. Pairs for which `is_member` holds are skipped. Output is
/// ordered by (ctx, item).
pub fn infer_coaccess(
    events: &[AccessEvent],
    window_minutes: u32,
    min_count: u32,
    is_member: impl Fn(&NodeId, &NodeId) -> bool,
) -> Vec<Proposal> {
    let window_ms = i64::from(window_minutes) * 60_000;
    let min_count = min_count.max(1) as usize;
    let mut recent: HashMap<(&NodeId, &NodeId), VecDeque<i64>> = HashMap::new();
    let mut hits: BTreeMap<(NodeId, NodeId), ()> = BTreeMap::new();
    for e in events {
        let Some(item) = e.item.as_ref() else { continue };
        if !matches!(e.action, AccessAction::Open | AccessAction::Save) {
            continue;
        }
        let ts = to_ms(e.ts);
        let q = recent.entry((&e.ctx, item)).or_default();
        q.push_back(ts);
        while q.front().is_some_and(|&t| ts - t > window_ms) {
            q.pop_front();
        }
        if q.len() >= min_count {
            hits.insert((e.ctx.clone(), item.clone()), ());
        }
    }
    hits.into_keys()
        .filter(|(ctx, item)| !is_member(item, ctx))
        .map(|(ctx, item)| Proposal::new(item, ctx, COACCESS_STRENGTH, Rule::Coaccess))
        .collect()
}

impl Desk {
    pub fn proposals(&self) -> Vec<Proposal> {
        self.proposals.values().cloned().collect()
    }

    pub fn proposal(&self, id: &str) -> Result<&Proposal> {
        self.proposals.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    /// Mail headers stored on a MAIL node.
    pub fn mail_header(&self, mail: &NodeId) -> Result<MailHeader> {
        let node = self.item(mail)?;
        if node.kind != NodeKind::Mail {
            return Err(Error::UnknownId(mail.to_string()));
        }
        let a = &node.attrs;
        let s = |k: &str| a.str(k).unwrap_or_default().to_string();
        Ok(MailHeader {
            message_id: s(keys::MESSAGE_ID),
            in_reply_to: a.str(keys::IN_REPLY_TO).map(str::to_string),
            references: a.str(keys::REFERENCES).map(|r| r.split(' ').map(str::to_string).collect()).unwrap_or_default(),
            from: s(keys::FROM),
            to: s(keys::TO),
            subject: s(keys::SUBJECT),
            date: a.int(keys::DATE).map(crate::clock::from_ms),
            date_raw: s(keys::DATE_RAW),
        })
    }

    fn resolve_thread_parent(&self, h: &MailHeader) -> Option<NodeId> {
        if let Some(id) = h.in_reply_to.as_ref().and_then(|m| self.message_ids.get(m)) {
            return Some(id.clone());
        }
        h.references.iter().rev().find_map(|r| self.message_ids.get(r)).cloned()
    }

    /// Records the reply edge and proposes the parent's contexts for `mail`,
    /// applying them right away when reply inference runs in AUTO mode.
    pub fn infer_reply_context(&mut self, mail: &NodeId, now: Timestamp) -> Result<Vec<Proposal>> {
        let h = self.mail_header(mail)?;
        let Some(parent) = self.resolve_thread_parent(&h).filter(|p| p != mail) else {
            return Ok(Vec::new());
        };
        if self.graph.find_edge(mail, EdgeLabel::InReplyTo, &parent).is_none() {
            let mut b = self.batch(now);
            let eid = b.edge_id();
            b.push(Mutation::AddEdge {
                id: eid,
                src: mail.clone(),
                label: EdgeLabel::InReplyTo,
                dst: parent.clone(),
                attrs: Attrs::new(),
            });
            self.commit(now, "link_reply", b, json!({ "item": mail, "parent": parent }))?;
        }
        let mut fresh = Vec::new();
        for m in self.memberships_of(&parent) {
            if !self.context_state(&m.ctx).is_ok_and(ContextState::is_writable) {
                continue;
            }
            let p = Proposal::new(mail.clone(), m.ctx.clone(), m.strength * REPLY_DECAY, Rule::Reply);
            if self.proposals.contains_key(&p.id) || self.membership(mail, &m.ctx).is_some() {
                continue;
            }
            fresh.push(p);
        }
        self.record_proposals(&fresh, now)?;
        if self.config.inference.reply_mode == ApplyMode::Auto {
            let ids: Vec<String> = fresh.iter().map(|p| p.id.clone()).collect();
            self.apply_proposals(&ids, ApplyMode::Auto, now)?;
        }
        Ok(fresh.into_iter().map(|p| self.proposals[&p.id].clone()).collect())
    }

    /// Runs the co-access rule over the recorded access events.
    pub fn infer_coaccess(&mut self, now: Timestamp) -> Result<Vec<Proposal>> {
        let cfg = self.config.inference.clone();
        let events = self.access_events();
        let fresh: Vec<Proposal> =
            infer_coaccess(&events, cfg.coaccess_window_minutes, cfg.coaccess_min_count, |item, ctx| {
                self.membership(item, ctx).is_some()
            })
            .into_iter()
            .filter(|p| {
                !self.proposals.contains_key(&p.id)
                    && self.context_state(&p.ctx).is_ok_and(ContextState::is_writable)
                    && self.graph.contains_node(&p.item)
            })
            .collect();
        self.record_proposals(&fresh, now)?;
        if cfg.coaccess_mode == ApplyMode::Auto {
            let ids: Vec<String> = fresh.iter().map(|p| p.id.clone()).collect();
            self.apply_proposals(&ids, ApplyMode::Auto, now)?;
        }
        Ok(fresh.into_iter().map(|p| self.proposals[&p.id].clone()).collect())
    }

    fn record_proposals(&mut self, fresh: &[Proposal], now: Timestamp) -> Result<()> {
        for p in fresh {
            let b = self.batch(now);
            self.commit(now, "proposal_added", b, json!({ "proposal": p }))?;
            self.proposals.insert(p.id.clone(), p.clone());
        }
        Ok(())
    }

    /// AUTO turns pending proposals into INFERRED memberships; a proposal
    /// whose membership appeared meanwhile is rejected as stale. SUGGEST
    /// leaves them pending.
    pub fn apply_proposals(&mut self, ids: &[String], mode: ApplyMode, now: Timestamp) -> Result<ApplyOutcome> {
        let mut out = ApplyOutcome::default();
        if mode == ApplyMode::Suggest {
            return Ok(out);
        }
        for id in ids {
            match self.accept_proposal(id, now) {
                Ok(_) => out.applied += 1,
                Err(Error::StaleProposal(id)) => out.stale.push(id),
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    pub fn accept_proposal(&mut self, id: &str, now: Timestamp) -> Result<Membership> {
        let mut p = self.proposal(id)?.clone();
        if p.status != ProposalStatus::Pending {
            return Err(Error::StaleProposal(id.to_string()));
        }
        let writable = self.context_state(&p.ctx).is_ok_and(ContextState::is_writable);
        if self.membership(&p.item, &p.ctx).is_some() || !writable || self.item(&p.item).is_err() {
            p.status = ProposalStatus::Rejected;
            let b = self.batch(now);
            self.commit(now, "reject_proposal", b, json!({ "proposal": p, "stale": true }))?;
            self.proposals.insert(p.id.clone(), p);
            return Err(Error::StaleProposal(id.to_string()));
        }
        p.status = ProposalStatus::Accepted;
        let mut b = self.batch(now);
        let m = self.push_membership_upsert(&mut b, &p.ctx, &p.item, p.strength, Origin::Inferred, now);
        self.commit(now, "accept_proposal", b, json!({ "proposal": p, "ctx": p.ctx, "item": p.item }))?;
        self.proposals.insert(p.id.clone(), p);
        Ok(m)
    }

    pub fn reject_proposal(&mut self, id: &str, now: Timestamp) -> Result<Proposal> {
        let mut p = self.proposal(id)?.clone();
        if p.status != ProposalStatus::Pending {
            return Err(Error::StaleProposal(id.to_string()));
        }
        p.status = ProposalStatus::Rejected;
        let b = self.batch(now);
        self.commit(now, "reject_proposal", b, json!({ "proposal": p }))?;
        self.proposals.insert(p.id.clone(), p.clone());
        Ok(p)
    }

    /// Reinforces a membership: access time moves to `now` (never backward)
    /// and strength grows by a fixed step up to 1.0. HIDE and CONDENSE flags
    /// are lifted; ARCHIVE and DELETE stay until the item is re-filed.
    pub fn touch(&mut self, item: &NodeId, ctx: &NodeId, now: Timestamp) -> Result<Membership> {
        let e = self.graph.find_edge(ctx, EdgeLabel::ContainsItem, item).ok_or_else(|| {
            Error::UnknownMembership { item: item.to_string(), ctx: ctx.to_string() }
        })?;
        let mut m = Membership::from_edge(e);
        m.strength = (m.strength + TOUCH_STEP).min(1.0);
        m.last_access_at = m.last_access_at.max(now);
        let mut unset = Vec::new();
        if matches!(m.measure, Measure::Hide | Measure::Condense) {
            m.measure = Measure::Keep;
            unset.push(keys::MEASURE.into());
        }
        let mut b = self.batch(now);
        b.push(Mutation::SetEdgeAttrs {
            id: e.id.clone(),
            set: Attrs::new()
                .with(keys::STRENGTH, m.strength)
                .with(keys::LAST_ACCESS_AT, to_ms(m.last_access_at)),
            unset,
        });
        let access = AccessEvent { item: Some(item.clone()), ctx: ctx.clone(), ts: now, action: AccessAction::Open };
        self.commit(now, "touch", b, json!({ "ctx": ctx, "item": item, "strength": m.strength, "access": access }))?;
        self.push_access(access);
        Ok(m)
    }

    /// Stores a raw RFC 5322 message as a MAIL item (deduplicated by
    /// Message-ID), files it in `ctx` when given, and runs reply inference.
    pub fn ingest_mail(
        &mut self,
        raw: &[u8],
        ctx: Option<&NodeId>,
        now: Timestamp,
    ) -> Result<(NodeId, Vec<Proposal>)> {
        let h = parse_header(raw);
        let id = match self.message_ids.get(&h.message_id).cloned() {
            Some(existing) => {
                if let Some(c) = ctx {
                    self.add_item(c, &existing, 1.0, Origin::Protocol, now)?;
                }
                existing
            }
            None => {
                let mut attrs = Attrs::new()
                    .with(keys::NAME, if h.subject.is_empty() { "(no subject)" } else { h.subject.as_str() })
                    .with(keys::MESSAGE_ID, h.message_id.as_str())
                    .with(keys::FROM, h.from.as_str())
                    .with(keys::TO, h.to.as_str())
                    .with(keys::SUBJECT, h.subject.as_str());
                if let Some(r) = &h.in_reply_to {
                    attrs.set(keys::IN_REPLY_TO, r.as_str());
                }
                if !h.references.is_empty() {
                    attrs.set(keys::REFERENCES, h.references.join(" "));
                }
                if let Some(d) = h.date {
                    attrs.set(keys::DATE, to_ms(d));
                }
                if !h.date_raw.is_empty() {
                    attrs.set(keys::DATE_RAW, h.date_raw.as_str());
                }
                let filing = ctx.map(|c| (c, 1.0, Origin::Protocol));
                self.create_item(NodeKind::Mail, attrs, Some(raw), filing, now)?
            }
        };
        let proposals = self.infer_reply_context(&id, now)?;
        Ok((id, proposals))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{parse_ts, plus_days};
    use crate::desk::DeskConfig;

    fn t0() -> Timestamp {
        parse_ts("2024-03-01T09:00:00Z").unwrap()
    }

    fn mail(id: &str, reply_to: Option<&str>, refs: &[&str]) -> Vec<u8> {
        let mut s = format!("Message-ID: <{id}>\r\nSubject: s {id}\r\nFrom: a@x\r\n");
        if let Some(r) = reply_to {
            s.push_str(&format!("In-Reply-To: <{r}>\r\n"));
        }
        if !refs.is_empty() {
            let refs: Vec<String> = refs.iter().map(|r| format!("<{r}>")).collect();
            s.push_str(&format!("References: {}\r\n", refs.join(" ")));
        }
        s.push_str("\r\nbody\r\n");
        s.into_bytes()
    }

    #[test]
    fn no_thread_headers_no_proposals() {
        let mut d = Desk::in_memory(DeskConfig::default()).unwrap();
        let (_, p) = d.ingest_mail(&mail("m1@x", None, &[]), None, t0()).unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn reply_chain_decays_by_rho() {
        let mut d = Desk::in_memory(DeskConfig::default()).unwrap();
        let c = d.create_context("C", None, t0()).unwrap();
        d.ingest_mail(&mail("m1@x", None, &[]), Some(&c), t0()).unwrap();
        let (r1, p) = d.ingest_mail(&mail("r1@x", Some("m1@x"), &[]), None, t0()).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].item.clone(), p[0].ctx.clone()), (r1.clone(), c.clone()));
        assert!((p[0].strength - 0.9).abs() < 1e-12);
        assert_eq!(p[0].status, ProposalStatus::Accepted);
        let (r2, _) = d.ingest_mail(&mail("r2@x", Some("r1@x"), &[]), None, t0()).unwrap();
        let m = d.membership(&r2, &c).unwrap();
        assert!((m.strength - 0.81).abs() < 1e-12);
        assert_eq!(m.origin, Origin::Inferred);
        assert!(d.graph().find_edge(&r2, EdgeLabel::InReplyTo, &r1).is_some());
    }

    #[test]
    fn references_fallback_uses_last_resolvable_id() {
        let mut d = Desk::in_memory(DeskConfig::default()).unwrap();
        let a = d.create_context("A", None, t0()).unwrap();
        let b = d.create_context("B", None, t0()).unwrap();
        d.ingest_mail(&mail("m1@x", None, &[]), Some(&a), t0()).unwrap();
        d.ingest_mail(&mail("m2@x", None, &[]), Some(&b), t0()).unwrap();
        let (r, _) = d.ingest_mail(&mail("r@x", None, &["m1@x", "m2@x", "gone@x"]), None, t0()).unwrap();
        assert!(d.membership(&r, &b).is_some());
        assert!(d.membership(&r, &a).is_none());
    }

    #[test]
    fn reply_inference_is_idempotent() {
        let mut d = Desk::in_memory(DeskConfig::default()).unwrap();
        let c = d.create_context("C", None, t0()).unwrap();
        d.ingest_mail(&mail("m1@x", None, &[]), Some(&c), t0()).unwrap();
        let (r, _) = d.ingest_mail(&mail("r@x", Some("m1@x"), &[]), None, t0()).unwrap();
        let seq = d.seq();
        assert!(d.infer_reply_context(&r, t0()).unwrap().is_empty());
        let (again, p) = d.ingest_mail(&mail("r@x", Some("m1@x"), &[]), None, t0()).unwrap();
        assert_eq!(again, r);
        assert!(p.is_empty());
        assert_eq!(d.seq(), seq);
        assert_eq!(d.memberships_of(&r).len(), 1);
        assert_eq!(d.proposals().len(), 1);
    }

    #[test]
    fn suggest_mode_leaves_proposals_pending() {
        let mut d = Desk::in_memory(DeskConfig::default()).unwrap();
        d.inference_config_mut().reply_mode = ApplyMode::Suggest;
        let a = d.create_context("A", None, t0()).unwrap();
        let b = d.create_context("B", None, t0()).unwrap();
        let (m1, _) = d.ingest_mail(&mail("m1@x", None, &[]), Some(&a), t0()).unwrap();
        d.add_item(&b, &m1, 1.0, Origin::User, t0()).unwrap();
        let (r, p) = d.ingest_mail(&mail("r@x", Some("m1@x"), &[]), None, t0()).unwrap();
        assert_eq!(p.len(), 2);
        assert!(p.iter().all(|p| p.status == ProposalStatus::Pending));
        assert!(d.memberships_of(&r).is_empty());

        // one raced by a manual add
        d.add_item(&a, &r, 1.0, Origin::User, t0()).unwrap();
        let ids: Vec<String> = p.iter().map(|p| p.id.clone()).collect();
        let out = d.apply_proposals(&ids, ApplyMode::Auto, t0()).unwrap();
        assert_eq!(out.applied, 1);
        assert_eq!(out.stale, vec![p.iter().find(|p| p.ctx == a).unwrap().id.clone()]);
        assert_eq!(d.proposal(&out.stale[0]).unwrap().status, ProposalStatus::Rejected);
        assert_eq!(d.membership(&r, &b).unwrap().origin, Origin::Inferred);
    }

    fn open(item: &str, ctx: &str, minute: i64) -> AccessEvent {
        AccessEvent {
            item: Some(NodeId::new(item)),
            ctx: NodeId::new(ctx),
            ts: t0() + chrono::Duration::minutes(minute),
            action: AccessAction::Open,
        }
    }

    #[test]
    fn coaccess_threshold_and_window() {
        let three = vec![open("x", "C", 0), open("x", "C", 10), open("x", "C", 20)];
        let p = infer_coaccess(&three, 60, 3, |_, _| false);
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].item.as_str(), p[0].ctx.as_str(), p[0].strength), ("x", "C", 0.3));
        assert!(infer_coaccess(&three[..2], 60, 3, |_, _| false).is_empty());
        assert!(infer_coaccess(&three, 60, 3, |_, _| true).is_empty());
        let spread = vec![open("x", "C", 0), open("x", "C", 50), open("x", "C", 120)];
        assert!(infer_coaccess(&spread, 60, 3, |_, _| false).is_empty());
        assert_eq!(infer_coaccess(&three, 60, 3, |_, _| false), p);
    }

    #[test]
    fn coaccess_on_desk_suggests() {
        let mut d = Desk::in_memory(DeskConfig::default()).unwrap();
        let c = d.create_context("C", None, t0()).unwrap();
        let x = d.create_item(NodeKind::File, Attrs::new().with(keys::NAME, "x"), None, None, t0()).unwrap();
        for i in 0..3 {
            d.push_access(AccessEvent {
                item: Some(x.clone()),
                ctx: c.clone(),
                ts: plus_days(t0(), i as f64 / 1440.0),
                action: AccessAction::Open,
            });
        }
        let p = d.infer_coaccess(t0()).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].status, ProposalStatus::Pending);
        assert!(d.infer_coaccess(t0()).unwrap().is_empty());
    }

    #[test]
    fn touch_rules() {
        let mut d = Desk::in_memory(DeskConfig::default()).unwrap();
        let c = d.create_context("C", None, t0()).unwrap();
        let f = d.create_item(NodeKind::File, Attrs::new().with(keys::NAME, "f"), None, Some((&c, 1.0, Origin::User)), t0()).unwrap();
        let g = d.create_item(NodeKind::File, Attrs::new().with(keys::NAME, "g"), None, Some((&c, 0.3, Origin::User)), t0()).unwrap();
        assert_eq!(d.touch(&f, &c, t0()).unwrap().strength, 1.0);
        assert!((d.touch(&g, &c, t0()).unwrap().strength - 0.35).abs() < 1e-12);
        let later = plus_days(t0(), 2.0);
        d.touch(&g, &c, later).unwrap();
        let m = d.touch(&g, &c, t0()).unwrap();
        assert_eq!(m.last_access_at, later);
        let u = d.create_item(NodeKind::File, Attrs::new().with(keys::NAME, "u"), None, None, t0()).unwrap();
        assert_eq!(d.touch(&u, &c, t0()).unwrap_err().code(), "UNKNOWN_MEMBERSHIP");
    }
}
