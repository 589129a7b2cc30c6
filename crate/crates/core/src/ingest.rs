//! Import from the local disk. Each imported item gets its own commit and,
//! when a context is given, a PROTOCOL membership of strength 1.0.
//! [`Desk::bulk_create`] packs many items into one commit for large loads.

use std::path::Path;

use serde::Serialize;
use walkdir::WalkDir;

use crate::clock::Timestamp;
use crate::context::Origin;
use crate::desk::{keys, Desk};
use crate::error::{Error, Result};
use crate::facade::ical::{parse_cards, parse_events};
use crate::graph::{Attrs, NodeId, NodeKind};
use crate::mail::split_mbox;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IngestCounts {
    pub items: usize,
    pub memberships: usize,
}

impl IngestCounts {
    fn add(&mut self, other: IngestCounts) {
        self.items += other.items;
        self.memberships += other.memberships;
    }
}

impl std::fmt::Display for IngestCounts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} items, {} memberships", self.items, self.memberships)
    }
}

/// The ACTIVE context called `name`, created at the root when missing.
pub fn context_by_name(desk: &mut Desk, name: &str, now: Timestamp) -> Result<NodeId> {
    match desk.find_context_by_name(name) {
        Some(c) => Ok(c),
        None => desk.create_context(name, None, now),
    }
}

fn create(desk: &mut Desk, kind: NodeKind, attrs: Attrs, content: Option<&[u8]>, ctx: Option<&NodeId>, now: Timestamp) -> Result<IngestCounts> {
    desk.create_item(kind, attrs, content, ctx.map(|c| (c, 1.0, Origin::Protocol)), now)?;
    Ok(IngestCounts { items: 1, memberships: usize::from(ctx.is_some()) })
}

/// Every regular file under `dir`, as FILE items named after the file.
pub fn ingest_dir(desk: &mut Desk, dir: &Path, ctx: Option<&NodeId>, now: Timestamp) -> Result<IngestCounts> {
    let mut counts = IngestCounts::default();
    let mut files: Vec<_> = WalkDir::new(dir)
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Io(e.into()))?
        .into_iter()
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .collect();
    files.sort();
    for path in files {
        let bytes = std::fs::read(&path)?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        counts.add(create(desk, NodeKind::File, Attrs::new().with(keys::NAME, name.as_str()), Some(&bytes), ctx, now)?);
    }
    Ok(counts)
}

pub fn ingest_mbox_bytes(desk: &mut Desk, data: &[u8], ctx: Option<&NodeId>, now: Timestamp) -> Result<IngestCounts> {
    let mut counts = IngestCounts::default();
    for raw in split_mbox(data) {
        let before = desk.graph().node_count();
        let members = ctx.map_or(0, |c| desk.member_count(c));
        desk.ingest_mail(&raw, ctx, now)?;
        counts.items += usize::from(desk.graph().node_count() > before);
        counts.memberships += ctx.map_or(0, |c| desk.member_count(c) - members);
    }
    Ok(counts)
}

pub fn ingest_ics_text(desk: &mut Desk, text: &str, ctx: Option<&NodeId>, now: Timestamp) -> Result<IngestCounts> {
    let mut counts = IngestCounts::default();
    for attrs in parse_events(text) {
        let attrs = if attrs.get(keys::NAME).is_some() { attrs } else { attrs.with(keys::NAME, "event") };
        counts.add(create(desk, NodeKind::Event, attrs, None, ctx, now)?);
    }
    Ok(counts)
}

pub fn ingest_vcf_text(desk: &mut Desk, text: &str, ctx: Option<&NodeId>, now: Timestamp) -> Result<IngestCounts> {
    let mut counts = IngestCounts::default();
    for attrs in parse_cards(text) {
        counts.add(create(desk, NodeKind::Contact, attrs, None, ctx, now)?);
    }
    Ok(counts)
}

/// One URL per line, optionally followed by a tab and a title.
pub fn ingest_bookmarks_text(desk: &mut Desk, text: &str, ctx: Option<&NodeId>, now: Timestamp) -> Result<IngestCounts> {
    let mut counts = IngestCounts::default();
    for line in text.lines().map(str::trim_end).filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
        let (uri, title) = match line.split_once('\t') {
            Some((u, t)) if !t.trim().is_empty() => (u.trim(), t.trim()),
            Some((u, _)) => (u.trim(), u.trim()),
            None => (line.trim(), line.trim()),
        };
        let attrs = Attrs::new().with(keys::NAME, title).with(keys::URI, uri);
        counts.add(create(desk, NodeKind::Bookmark, attrs, None, ctx, now)?);
    }
    Ok(counts)
}

/// One item of a bulk import with its memberships.
#[derive(Clone, Debug, PartialEq)]
pub struct BulkItem {
    pub kind: NodeKind,
    pub attrs: Attrs,
    pub content: Option<Vec<u8>>,
    pub memberships: Vec<(NodeId, f64)>,
}

impl Desk {
    /// Creates many items in one commit. Mail is refused because a mail's
    /// IMAP UID is the sequence of the commit that created it.
    pub fn bulk_create(&mut self, items: &[BulkItem], origin: Origin, now: Timestamp) -> Result<Vec<NodeId>> {
        let mut ctxs: Vec<&NodeId> = items.iter().flat_map(|i| i.memberships.iter().map(|(c, _)| c)).collect();
        ctxs.sort();
        ctxs.dedup();
        for c in ctxs {
            self.writable_context(c)?;
        }
        for it in items {
            if !it.kind.is_item() || it.kind == NodeKind::Mail {
                return Err(Error::InvalidArgument(format!("bulk import cannot create {}", it.kind.as_str())));
            }
            for (_, s) in &it.memberships {
                crate::context::check_strength(*s)?;
            }
        }
        let mut hashes = Vec::new();
        let mut b = self.batch(now);
        let mut ids = Vec::with_capacity(items.len());
        for it in items {
            let mut attrs = it.attrs.clone();
            if attrs.get(keys::CREATED_AT).is_none() {
                attrs.set(keys::CREATED_AT, crate::clock::to_ms(now));
            }
            if let Some(bytes) = &it.content {
                let h = self.blobs.put(bytes)?;
                attrs.set(keys::CONTENT_REF, h.as_str());
                attrs.set(keys::SIZE, bytes.len() as i64);
                hashes.push(h);
            }
            let id = b.node_id();
            b.push(crate::graph::Mutation::AddNode { id: id.clone(), kind: it.kind, attrs });
            let mut seen: Vec<&NodeId> = Vec::new();
            for (c, s) in &it.memberships {
                if !seen.contains(&c) {
                    seen.push(c);
                    self.push_membership_upsert(&mut b, c, &id, *s, origin, now);
                }
            }
            ids.push(id);
        }
        self.commit(now, "bulk_ingest", b, serde_json::json!({ "count": ids.len() }))?;
        for h in hashes {
            self.ref_content(&h);
        }
        Ok(ids)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Dir,
    Mbox,
    Ics,
    Vcf,
    Bookmarks,
}

pub fn ingest(desk: &mut Desk, source: Source, path: &Path, ctx: Option<&NodeId>, now: Timestamp) -> Result<IngestCounts> {
    match source {
        Source::Dir => ingest_dir(desk, path, ctx, now),
        Source::Mbox => ingest_mbox_bytes(desk, &std::fs::read(path)?, ctx, now),
        Source::Ics => ingest_ics_text(desk, &std::fs::read_to_string(path)?, ctx, now),
        Source::Vcf => ingest_vcf_text(desk, &std::fs::read_to_string(path)?, ctx, now),
        Source::Bookmarks => ingest_bookmarks_text(desk, &std::fs::read_to_string(path)?, ctx, now),
    }
}
