//! WebDAV (class 1) over context views.
//!
//! Namespace: `/dav/current/...` mounts the current context and
//! `/dav/contexts/<name>/...` every ACTIVE or CONDENSED context. Inside a
//! context the FILES view is the folder tree, and the reserved collections
//! `calendar/`, `contacts/` and `links/` hold `.ics`, `.vcf` and `.url`
//! leaves; a reserved collection is listed only when its view has leaves but
//! is always addressable. Deleting a leaf removes the membership, never the
//! item.

use std::fmt::Write as _;

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, CONTROLS};

use crate::clock::{from_ms, Timestamp};
use crate::context::{ContextState, Origin};
use crate::desk::{keys, Desk};
use crate::error::Error;
use crate::facade::ical::{serialize_icalendar, serialize_vcard};
use crate::forgetting::DeskAccess;
use crate::graph::{Attrs, Node, NodeId, NodeKind};
use crate::inference::{AccessAction, AccessEvent};
use crate::views::{dedup_names, sanitize, ViewKind, ViewNode, RESERVED};

pub const PREFIX: &str = "/dav";
pub const ALLOW: &str = "OPTIONS, PROPFIND, GET, HEAD, PUT, MKCOL, DELETE, MOVE";

const SEGMENT: &AsciiSet = &CONTROLS
    .add(b' ')
    .add(b'"')
    .add(b'#')
    .add(b'%')
    .add(b'<')
    .add(b'>')
    .add(b'?')
    .add(b'`')
    .add(b'{')
    .add(b'}')
    .add(b'/')
    .add(b'\\')
    .add(b'^')
    .add(b'|')
    .add(b'[')
    .add(b']');

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DavRequest {
    pub method: String,
    pub path: String,
    pub depth: Option<String>,
    pub destination: Option<String>,
    pub body: Vec<u8>,
}

impl DavRequest {
    pub fn new(method: &str, path: &str) -> DavRequest {
        DavRequest { method: method.to_string(), path: path.to_string(), ..Default::default() }
    }

    pub fn depth(mut self, d: &str) -> Self {
        self.depth = Some(d.to_string());
        self
    }

    pub fn destination(mut self, d: &str) -> Self {
        self.destination = Some(d.to_string());
        self
    }

    pub fn body(mut self, b: impl Into<Vec<u8>>) -> Self {
        self.body = b.into();
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DavResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl DavResponse {
    fn status(status: u16) -> DavResponse {
        DavResponse { status, headers: Vec::new(), body: Vec::new() }
    }

    fn header(mut self, k: &str, v: impl Into<String>) -> Self {
        self.headers.push((k.to_string(), v.into()));
        self
    }

    pub fn header_value(&self, k: &str) -> Option<&str> {
        self.headers.iter().find(|(h, _)| h.eq_ignore_ascii_case(k)).map(|(_, v)| v.as_str())
    }

    /// Number of `<D:response>` elements in a multistatus body.
    pub fn response_count(&self) -> usize {
        String::from_utf8_lossy(&self.body).matches("<D:response>").count()
    }

    /// The hrefs of a multistatus body, decoded.
    pub fn hrefs(&self) -> Vec<String> {
        let text = String::from_utf8_lossy(&self.body);
        text.split("<D:href>")
            .skip(1)
            .filter_map(|s| s.split("</D:href>").next())
            .map(|h| percent_decode_str(&xml_unescape(h)).decode_utf8_lossy().into_owned())
            .collect()
    }
}

fn error_status(e: &Error) -> u16 {
    match e {
        Error::CtxNotWritable(_) | Error::ParentNotActive(_) => 403,
        e => e.http_status(),
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn xml_unescape(s: &str) -> String {
    s.replace("&lt;", "<").replace("&gt;", ">").replace("&quot;", "\"").replace("&amp;", "&")
}

fn http_date(ms: i64) -> String {
    from_ms(ms).format("%a, %d %b %Y %H:%M:%S GMT").to_string()
}

/// Context names under `/dav/contexts`, deduplicated like view siblings.
pub fn context_dirs(desk: &Desk) -> Vec<(String, NodeId)> {
    let mut entries: Vec<(String, NodeId, ())> = desk
        .context_ids()
        .into_iter()
        .filter(|c| matches!(desk.context_state(c), Ok(ContextState::Active | ContextState::Condensed)))
        .map(|c| (sanitize(&desk.context_name(&c)), c, ()))
        .collect();
    dedup_names(&mut entries, &[]);
    let mut out: Vec<(String, NodeId)> = entries.into_iter().map(|(n, c, ())| (n, c)).collect();
    out.sort();
    out
}

#[derive(Clone, Debug, PartialEq)]
enum Parent {
    Top,
    Contexts,
    Coll { ctx: NodeId, view: ViewKind },
}

#[derive(Clone, Debug)]
enum Resolved {
    Top,
    Contexts,
    /// A collection inside a context. `root` marks a context root, where the
    /// reserved collections are listed beside the FILES children.
    Coll { ctx: NodeId, node: ViewNode, root: bool },
    Leaf { ctx: NodeId, item: NodeId, view: ViewKind },
    Absent { parent: Option<Parent>, name: String },
}

fn decode_segments(path: &str) -> Option<Vec<String>> {
    let rest = path.strip_prefix(PREFIX)?;
    if !(rest.is_empty() || rest.starts_with('/')) {
        return None;
    }
    rest.split('/')
        .filter(|s| !s.is_empty())
        .map(|s| percent_decode_str(s).decode_utf8().ok().map(|c| c.into_owned()))
        .collect()
}

/// Strips scheme and authority from a Destination header.
fn destination_path(dest: &str) -> &str {
    match dest.find("://") {
        Some(i) => dest[i + 3..].find('/').map_or("/", |j| &dest[i + 3 + j..]),
        None => dest,
    }
}

fn resolve(desk: &Desk, segs: &[String], now: Timestamp) -> Resolved {
    let absent = |parent: Option<Parent>, segs: &[String]| Resolved::Absent {
        parent,
        name: segs.last().cloned().unwrap_or_default(),
    };
    let (ctx, rest) = match segs {
        [] => return Resolved::Top,
        [first, rest @ ..] if first == "current" => match desk.current_id() {
            Some(c) => (c.clone(), rest),
            None => return absent(if rest.is_empty() { Some(Parent::Top) } else { None }, segs),
        },
        [first] if first == "contexts" => return Resolved::Contexts,
        [first, name, rest @ ..] if first == "contexts" => {
            match context_dirs(desk).into_iter().find(|(n, _)| n == name) {
                Some((_, c)) => (c, rest),
                None => return absent(if rest.is_empty() { Some(Parent::Contexts) } else { None }, segs),
            }
        }
        [_] => return absent(Some(Parent::Top), segs),
        _ => return absent(None, segs),
    };
    let Ok(files) = desk.materialize(&ctx, ViewKind::Files, now, false) else {
        return absent(None, segs);
    };
    let (view, tree, rest) = match rest.first() {
        Some(r) => match RESERVED.iter().find(|(n, _)| n == r) {
            Some((_, kind)) => match desk.materialize(&ctx, *kind, now, false) {
                Ok(t) => (*kind, t.root, &rest[1..]),
                Err(_) => return absent(None, segs),
            },
            None => (ViewKind::Files, files.root, rest),
        },
        None => (ViewKind::Files, files.root, rest),
    };
    let reserved_coll = view != ViewKind::Files;
    let mut cur_ctx = ctx;
    let mut node = tree;
    for (i, seg) in rest.iter().enumerate() {
        match node.children.iter().find(|c| &c.name == seg).cloned() {
            Some(child) if child.collection => {
                cur_ctx = child.node_id.clone().unwrap_or(cur_ctx);
                node = child;
            }
            Some(child) if i + 1 == rest.len() => {
                return Resolved::Leaf { ctx: cur_ctx, item: child.node_id.clone().unwrap_or_else(|| NodeId::new("")), view };
            }
            _ => {
                let parent = (i + 1 == rest.len()).then(|| Parent::Coll { ctx: cur_ctx.clone(), view });
                return absent(parent, segs);
            }
        }
    }
    Resolved::Coll { ctx: cur_ctx, node, root: rest.is_empty() && !reserved_coll }
}

struct Entry {
    href: String,
    name: String,
    collection: bool,
    item: Option<NodeId>,
}

fn child_href(base: &str, name: &str, collection: bool) -> String {
    let enc = utf8_percent_encode(name, SEGMENT).to_string();
    if collection {
        format!("{base}{enc}/")
    } else {
        format!("{base}{enc}")
    }
}

fn leaf_body(desk: &Desk, node: &Node) -> Result<Vec<u8>, Error> {
    match node.kind {
        NodeKind::Event => serialize_icalendar(node).map(String::into_bytes),
        NodeKind::Contact => serialize_vcard(node).map(String::into_bytes),
        NodeKind::Bookmark => {
            let uri = node.attrs.str(keys::URI).unwrap_or_default();
            Ok(format!("[InternetShortcut]\r\nURL={uri}\r\n").into_bytes())
        }
        _ => Ok(desk.content(&node.id)?.unwrap_or_default()),
    }
}

fn content_type(node: &Node, name: &str) -> &'static str {
    match node.kind {
        NodeKind::Event => "text/calendar; charset=utf-8",
        NodeKind::Contact => "text/vcard; charset=utf-8",
        NodeKind::Bookmark => "application/internet-shortcut",
        NodeKind::Mail => "message/rfc822",
        NodeKind::Note => "text/plain; charset=utf-8",
        _ => match name.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase()).as_deref() {
            Some("txt" | "md") => "text/plain; charset=utf-8",
            Some("html" | "htm") => "text/html",
            Some("pdf") => "application/pdf",
            Some("json") => "application/json",
            Some("png") => "image/png",
            Some("jpg" | "jpeg") => "image/jpeg",
            _ => "application/octet-stream",
        },
    }
}

fn multistatus(desk: &Desk, entries: &[Entry]) -> DavResponse {
    let mut x = String::from("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<D:multistatus xmlns:D=\"DAV:\">\n");
    for e in entries {
        let _ = write!(x, "<D:response><D:href>{}</D:href><D:propstat><D:prop>", xml_escape(&e.href));
        let _ = write!(x, "<D:displayname>{}</D:displayname>", xml_escape(&e.name));
        if e.collection {
            x.push_str("<D:resourcetype><D:collection/></D:resourcetype>");
        } else if let Some(node) = e.item.as_ref().and_then(|i| desk.graph().node(i)) {
            let len = match node.kind {
                NodeKind::File => node.attrs.int(keys::SIZE).map(|s| s as usize),
                _ => None,
            }
            .or_else(|| leaf_body(desk, node).ok().map(|b| b.len()))
            .unwrap_or(0);
            let modified = node.attrs.int(keys::MODIFIED_AT).or(node.attrs.int(keys::CREATED_AT)).unwrap_or(0);
            x.push_str("<D:resourcetype/>");
            let _ = write!(x, "<D:getcontentlength>{len}</D:getcontentlength>");
            let _ = write!(x, "<D:getcontenttype>{}</D:getcontenttype>", content_type(node, &e.name));
            let _ = write!(x, "<D:getlastmodified>{}</D:getlastmodified>", http_date(modified));
            let etag = node.attrs.str(keys::CONTENT_REF).map_or_else(|| format!("{}-{modified}", node.id), |h| h[..16].to_string());
            let _ = write!(x, "<D:getetag>\"{etag}\"</D:getetag>");
        }
        x.push_str("</D:prop><D:status>HTTP/1.1 200 OK</D:status></D:propstat></D:response>\n");
    }
    x.push_str("</D:multistatus>\n");
    DavResponse { status: 207, headers: vec![("Content-Type".into(), "application/xml; charset=utf-8".into())], body: x.into_bytes() }
}

fn children_of(desk: &Desk, r: &Resolved, base: &str, now: Timestamp) -> Vec<Entry> {
    match r {
        Resolved::Top => {
            let mut v = Vec::new();
            if desk.current_id().is_some() {
                v.push(Entry { href: format!("{base}current/"), name: "current".into(), collection: true, item: None });
            }
            v.push(Entry { href: format!("{base}contexts/"), name: "contexts".into(), collection: true, item: None });
            v
        }
        Resolved::Contexts => context_dirs(desk)
            .into_iter()
            .map(|(n, _)| Entry { href: child_href(base, &n, true), name: n, collection: true, item: None })
            .collect(),
        Resolved::Coll { ctx, node, root, .. } => {
            let mut v: Vec<Entry> = node
                .children
                .iter()
                .map(|c| Entry {
                    href: child_href(base, &c.name, c.collection),
                    name: c.name.clone(),
                    collection: c.collection,
                    item: if c.collection { None } else { c.node_id.clone() },
                })
                .collect();
            if *root {
                let at = v.iter().position(|e| !e.collection).unwrap_or(v.len());
                let reserved = RESERVED
                    .iter()
                    .filter(|(_, kind)| desk.materialize(ctx, *kind, now, false).is_ok_and(|t| t.leaf_count() > 0))
                    .map(|(n, _)| Entry { href: child_href(base, n, true), name: n.to_string(), collection: true, item: None });
                v.splice(at..at, reserved);
            }
            v
        }
        _ => Vec::new(),
    }
}

fn canonical_href(path: &str, collection: bool) -> String {
    let trimmed = path.trim_end_matches('/');
    if collection {
        format!("{trimmed}/")
    } else {
        trimmed.to_string()
    }
}

fn propfind(desk: &Desk, req: &DavRequest, now: Timestamp) -> DavResponse {
    let depth = match req.depth.as_deref().map(str::trim) {
        None | Some("1") => 1,
        Some("0") => 0,
        Some(_) => return DavResponse::status(403),
    };
    let Some(segs) = decode_segments(&req.path) else { return DavResponse::status(404) };
    let r = resolve(desk, &segs, now);
    let (collection, item, name) = match &r {
        Resolved::Top => (true, None, "dav".to_string()),
        Resolved::Contexts => (true, None, "contexts".to_string()),
        Resolved::Coll { node, .. } => (true, None, segs.last().cloned().unwrap_or_else(|| node.name.clone())),
        Resolved::Leaf { item, .. } => (false, Some(item.clone()), segs.last().cloned().unwrap_or_default()),
        Resolved::Absent { .. } => return DavResponse::status(404),
    };
    let href = canonical_href(&req.path, collection);
    let mut entries = vec![Entry { href: href.clone(), name, collection, item }];
    if depth == 1 && collection {
        entries.extend(children_of(desk, &r, &href, now));
    }
    multistatus(desk, &entries)
}

fn get(desk: &Desk, req: &DavRequest, now: Timestamp, head: bool) -> DavResponse {
    let Some(segs) = decode_segments(&req.path) else { return DavResponse::status(404) };
    match resolve(desk, &segs, now) {
        Resolved::Leaf { item, .. } => {
            let Ok(node) = desk.node(&item) else { return DavResponse::status(404) };
            let body = match leaf_body(desk, node) {
                Ok(b) => b,
                Err(e) => return DavResponse::status(error_status(&e)),
            };
            if let Some(cur) = desk.current_id() {
                desk.push_access(AccessEvent { item: Some(item.clone()), ctx: cur.clone(), ts: now, action: AccessAction::Open });
            }
            let resp = DavResponse::status(200)
                .header("Content-Type", content_type(node, segs.last().map_or("", String::as_str)))
                .header("Content-Length", body.len().to_string());
            DavResponse { body: if head { Vec::new() } else { body }, ..resp }
        }
        Resolved::Absent { .. } => DavResponse::status(404),
        _ => DavResponse::status(405).header("Allow", "OPTIONS, PROPFIND, MKCOL"),
    }
}

fn put(desk: &mut Desk, req: &DavRequest, now: Timestamp) -> DavResponse {
    let Some(segs) = decode_segments(&req.path) else { return DavResponse::status(404) };
    let saved = |desk: &Desk, item: &NodeId| {
        if let Some(cur) = desk.current_id() {
            desk.push_access(AccessEvent { item: Some(item.clone()), ctx: cur.clone(), ts: now, action: AccessAction::Save });
        }
    };
    match resolve(desk, &segs, now) {
        Resolved::Leaf { item, view: ViewKind::Files, .. } => match desk.update_content(&item, &req.body, now) {
            Ok(()) => {
                saved(desk, &item);
                DavResponse::status(204)
            }
            Err(e) => DavResponse::status(error_status(&e)),
        },
        Resolved::Absent { parent: Some(Parent::Coll { ctx, view: ViewKind::Files }), name } => {
            let attrs = Attrs::new().with(keys::NAME, name.as_str());
            match desk.create_item(NodeKind::File, attrs, Some(&req.body), Some((&ctx, 1.0, Origin::Protocol)), now) {
                Ok(item) => {
                    saved(desk, &item);
                    DavResponse::status(201)
                }
                Err(e) => DavResponse::status(error_status(&e)),
            }
        }
        Resolved::Absent { parent: Some(Parent::Coll { .. }), .. } => DavResponse::status(405),
        Resolved::Absent { .. } => DavResponse::status(409),
        _ => DavResponse::status(405),
    }
}

fn mkcol(desk: &mut Desk, req: &DavRequest, now: Timestamp) -> DavResponse {
    if !req.body.is_empty() {
        return DavResponse::status(415);
    }
    let Some(segs) = decode_segments(&req.path) else { return DavResponse::status(404) };
    let created = match resolve(desk, &segs, now) {
        Resolved::Absent { parent: Some(Parent::Contexts), name } => desk.create_context(&name, None, now),
        Resolved::Absent { parent: Some(Parent::Coll { ctx, view: ViewKind::Files }), name } => {
            desk.create_context(&name, Some(&ctx), now)
        }
        Resolved::Absent { parent: Some(_), .. } => return DavResponse::status(403),
        Resolved::Absent { parent: None, .. } => return DavResponse::status(409),
        _ => return DavResponse::status(405),
    };
    match created {
        Ok(_) => DavResponse::status(201),
        Err(e) => DavResponse::status(error_status(&e)),
    }
}

fn delete(desk: &mut Desk, req: &DavRequest, now: Timestamp) -> DavResponse {
    let Some(segs) = decode_segments(&req.path) else { return DavResponse::status(404) };
    match resolve(desk, &segs, now) {
        Resolved::Leaf { ctx, item, .. } => match desk.remove_item(&ctx, &item, now) {
            Ok(_) => DavResponse::status(204),
            Err(e) => DavResponse::status(error_status(&e)),
        },
        Resolved::Absent { .. } => DavResponse::status(404),
        _ => DavResponse::status(405),
    }
}

fn mv(desk: &mut Desk, req: &DavRequest, now: Timestamp) -> DavResponse {
    let Some(segs) = decode_segments(&req.path) else { return DavResponse::status(404) };
    let (from, item, view) = match resolve(desk, &segs, now) {
        Resolved::Leaf { ctx, item, view } => (ctx, item, view),
        Resolved::Absent { .. } => return DavResponse::status(404),
        _ => return DavResponse::status(405),
    };
    let Some(dest) = req.destination.as_deref() else { return DavResponse::status(400) };
    let Some(dsegs) = decode_segments(destination_path(dest)) else { return DavResponse::status(502) };
    let (to, rename, status) = match resolve(desk, &dsegs, now) {
        Resolved::Absent { parent: Some(Parent::Coll { ctx, view: v }), name } if v == view => (ctx, Some(name), 201),
        Resolved::Leaf { ctx, item: other, .. } if other == item => {
            if ctx == from {
                return DavResponse::status(403);
            }
            (ctx, None, 204)
        }
        Resolved::Leaf { .. } => return DavResponse::status(412),
        _ => return DavResponse::status(409),
    };
    let rename = rename.filter(|n| view == ViewKind::Files && desk.graph().node(&item).and_then(|n| n.attrs.str(keys::NAME)) != Some(n.as_str()));
    match desk.move_item(&item, &from, &to, rename.as_deref(), now) {
        Ok(_) => DavResponse::status(status),
        Err(e) => DavResponse::status(error_status(&e)),
    }
}

/// Handles one authenticated request under `/dav`.
pub fn webdav_handle(access: &impl DeskAccess, req: &DavRequest, now: Timestamp) -> DavResponse {
    match req.method.to_ascii_uppercase().as_str() {
        "OPTIONS" => DavResponse::status(200).header("DAV", "1").header("Allow", ALLOW),
        "PROPFIND" => access.read(|d| propfind(d, req, now)),
        "GET" => access.read(|d| get(d, req, now, false)),
        "HEAD" => access.read(|d| get(d, req, now, true)),
        "PUT" => access.write(|d| put(d, req, now)),
        "MKCOL" => access.write(|d| mkcol(d, req, now)),
        "DELETE" => access.write(|d| delete(d, req, now)),
        "MOVE" => access.write(|d| mv(d, req, now)),
        _ => DavResponse::status(405).header("Allow", ALLOW),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::parse_ts;
    use crate::desk::DeskConfig;
    use parking_lot::RwLock;

    fn t0() -> Timestamp {
        parse_ts("2024-01-01T00:00:00Z").unwrap()
    }

    fn setup() -> (RwLock<Desk>, NodeId) {
        let mut d = Desk::in_memory(DeskConfig::default()).unwrap();
        let c = d.create_context("XY", None, t0()).unwrap();
        d.set_current(&c, t0()).unwrap();
        (RwLock::new(d), c)
    }

    fn call(d: &RwLock<Desk>, req: DavRequest) -> DavResponse {
        webdav_handle(d, &req, t0())
    }

    #[test]
    fn empty_context_depth_one_lists_only_itself() {
        let (d, _) = setup();
        d.write().create_context("fresh", None, t0()).unwrap();
        let r = call(&d, DavRequest::new("PROPFIND", "/dav/contexts/fresh/").depth("1"));
        assert_eq!(r.status, 207);
        assert_eq!(r.hrefs(), vec!["/dav/contexts/fresh/".to_string()]);
        assert_eq!(call(&d, DavRequest::new("PROPFIND", "/dav/contexts/fresh/calendar/").depth("1")).response_count(), 1);
        let r0 = call(&d, DavRequest::new("PROPFIND", "/dav/contexts/fresh").depth("0"));
        assert_eq!(r0.response_count(), 1);
        assert_eq!(call(&d, DavRequest::new("PROPFIND", "/dav/").depth("infinity")).status, 403);
    }

    #[test]
    fn put_into_current_files_it() {
        let (d, c) = setup();
        let r = call(&d, DavRequest::new("PUT", "/dav/current/notes.txt").body("hello"));
        assert_eq!(r.status, 201);
        let desk = d.read();
        let m = desk.members(&c);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].origin, Origin::Protocol);
        assert_eq!(m[0].strength, 1.0);
        assert_eq!(desk.node(&m[0].item).unwrap().kind, NodeKind::File);
        drop(desk);
        let g = call(&d, DavRequest::new("GET", "/dav/current/notes.txt"));
        assert_eq!((g.status, g.body.as_slice()), (200, b"hello".as_slice()));
        assert_eq!(call(&d, DavRequest::new("PUT", "/dav/current/notes.txt").body("v2")).status, 204);
        assert_eq!(call(&d, DavRequest::new("GET", "/dav/contexts/XY/notes.txt")).body, b"v2");
        assert_eq!(d.read().access_events().iter().filter(|a| a.action == AccessAction::Save).count(), 2);
    }

    #[test]
    fn status_codes() {
        let (d, _) = setup();
        assert_eq!(call(&d, DavRequest::new("GET", "/dav/current/none")).status, 404);
        assert_eq!(call(&d, DavRequest::new("GET", "/dav/current/")).status, 405);
        assert_eq!(call(&d, DavRequest::new("PUT", "/dav/current/a/b.txt").body("x")).status, 409);
        assert_eq!(call(&d, DavRequest::new("MKCOL", "/dav/current/a/b")).status, 409);
        assert_eq!(call(&d, DavRequest::new("MKCOL", "/dav/current/a")).status, 201);
        assert_eq!(call(&d, DavRequest::new("MKCOL", "/dav/current/a")).status, 405);
        assert_eq!(call(&d, DavRequest::new("PUT", "/dav/current/a/b.txt").body("x")).status, 201);
        assert_eq!(call(&d, DavRequest::new("DELETE", "/dav/current/a")).status, 405);
        assert_eq!(call(&d, DavRequest::new("MKCOL", "/dav/contexts/Other")).status, 201);
        assert_eq!(call(&d, DavRequest::new("PUT", "/dav/current/calendar/x.ics").body("x")).status, 405);
        assert_eq!(call(&d, DavRequest::new("OPTIONS", "/dav/")).header_value("DAV"), Some("1"));
        let sub = d.read().find_context_by_name("a").unwrap();
        assert_eq!(d.read().parent_of(&sub), d.read().current_id().cloned());
    }

    #[test]
    fn move_between_context_folders_preserves_strength() {
        let (d, xy) = setup();
        let m1 = d.write().create_context("meeting-1", Some(&xy), t0()).unwrap();
        let slides = d
            .write()
            .create_item(NodeKind::File, Attrs::new().with(keys::NAME, "slides.ppt"), Some(b"ppt"), Some((&m1, 0.9, Origin::User)), t0())
            .unwrap();
        let r = call(&d, DavRequest::new("MOVE", "/dav/contexts/meeting-1/slides.ppt").destination("http://localhost:8686/dav/contexts/XY/slides.ppt"));
        assert_eq!(r.status, 201);
        let desk = d.read();
        assert!(desk.membership(&slides, &m1).is_none());
        assert_eq!(desk.membership(&slides, &xy).unwrap().strength, 0.9);
    }

    #[test]
    fn move_onto_another_item_is_refused() {
        let (d, xy) = setup();
        for n in ["a.txt", "b.txt"] {
            d.write().create_item(NodeKind::File, Attrs::new().with(keys::NAME, n), Some(b"x"), Some((&xy, 1.0, Origin::User)), t0()).unwrap();
        }
        let r = call(&d, DavRequest::new("MOVE", "/dav/current/a.txt").destination("/dav/current/b.txt"));
        assert_eq!(r.status, 412);
        let r = call(&d, DavRequest::new("MOVE", "/dav/current/a.txt").destination("/dav/current/c.txt"));
        assert_eq!(r.status, 201);
        assert_eq!(call(&d, DavRequest::new("GET", "/dav/current/c.txt")).status, 200);
    }

    #[test]
    fn delete_removes_only_that_membership() {
        let (d, xy) = setup();
        let other = d.write().create_context("other", None, t0()).unwrap();
        let f = d.write().create_item(NodeKind::File, Attrs::new().with(keys::NAME, "f"), Some(b"x"), Some((&xy, 1.0, Origin::User)), t0()).unwrap();
        d.write().add_item(&other, &f, 1.0, Origin::User, t0()).unwrap();
        assert_eq!(call(&d, DavRequest::new("DELETE", "/dav/current/f")).status, 204);
        let desk = d.read();
        assert!(desk.graph().node(&f).is_some());
        assert_eq!(desk.memberships_of(&f).len(), 1);
    }

    #[test]
    fn reserved_collections_serve_ics_vcf_url() {
        let (d, xy) = setup();
        let ev = d
            .write()
            .create_item(NodeKind::Event, Attrs::new().with(keys::NAME, "kickoff").with(keys::START, 1_700_000_000_000i64), None, Some((&xy, 1.0, Origin::User)), t0())
            .unwrap();
        d.write()
            .create_item(NodeKind::Bookmark, Attrs::new().with(keys::NAME, "wiki").with(keys::URI, "https://wiki.example"), None, Some((&xy, 1.0, Origin::User)), t0())
            .unwrap();
        let cal = call(&d, DavRequest::new("PROPFIND", "/dav/current/calendar/").depth("1"));
        assert_eq!(cal.response_count(), 2);
        let g = call(&d, DavRequest::new("GET", &format!("/dav/current/calendar/{ev}.ics")));
        assert!(String::from_utf8(g.body).unwrap().contains("BEGIN:VEVENT"));
        let l = call(&d, DavRequest::new("GET", "/dav/current/links/wiki.url"));
        assert_eq!(String::from_utf8(l.body).unwrap(), "[InternetShortcut]\r\nURL=https://wiki.example\r\n");
        let root = call(&d, DavRequest::new("PROPFIND", "/dav/current/").depth("1"));
        assert!(root.hrefs().contains(&"/dav/current/links/".to_string()));
        assert!(!root.hrefs().iter().any(|h| h.ends_with("wiki.url") && !h.contains("/links/")));
    }

    #[test]
    fn names_are_percent_encoded() {
        let (d, _) = setup();
        assert_eq!(call(&d, DavRequest::new("PUT", "/dav/current/Q3%20plan%20%C3%A4.txt").body("x")).status, 201);
        let r = call(&d, DavRequest::new("PROPFIND", "/dav/current/").depth("1"));
        assert!(String::from_utf8_lossy(&r.body).contains("/dav/current/Q3%20plan%20%C3%A4.txt"));
        assert!(r.hrefs().contains(&"/dav/current/Q3 plan ä.txt".to_string()));
    }
}
