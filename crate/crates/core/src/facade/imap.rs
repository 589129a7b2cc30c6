//! Read-only IMAP4rev1 subset. Mailboxes are ACTIVE contexts with at least
//! one visible mail; a message's UID is the commit sequence that created the
//! mail node, so UIDs only grow. A selection holds the context id and the
//! message list taken at SELECT time, so switching the current context does
//! not retarget an open session.

use crate::clock::{from_ms, Timestamp};
use crate::context::ContextState;
use crate::desk::{keys, Desk};
use crate::forgetting::DeskAccess;
use crate::graph::{id_seq, NodeId};
use crate::inference::{AccessAction, AccessEvent};
use crate::mail::{header_fields, parse_addresses, Address};
use crate::views::{dedup_names, ViewKind};

pub const CAPABILITY: &str = "IMAP4rev1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImapState {
    NotAuth,
    Auth,
    Selected,
    Closed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub ctx: NodeId,
    pub name: String,
    pub read_only: bool,
    /// `(uid, mail)` in ascending uid order; position + 1 is the sequence number.
    pub messages: Vec<(u64, NodeId)>,
}

#[derive(Clone, Debug)]
pub struct ImapSession {
    pub state: ImapState,
    pub selected: Option<Selection>,
    pub tag: String,
    user: String,
    password: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImapReply {
    pub bytes: Vec<u8>,
    pub close: bool,
}

impl ImapReply {
    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.bytes).into_owned()
    }
}

impl ImapSession {
    pub fn new(user: &str, password: &str) -> ImapSession {
        ImapSession {
            state: ImapState::NotAuth,
            selected: None,
            tag: String::new(),
            user: user.to_string(),
            password: password.to_string(),
        }
    }

    pub fn greeting() -> &'static str {
        "* OK [CAPABILITY IMAP4rev1] cspaces IMAP ready\r\n"
    }
}

/// ASCII mailbox name for a context.
pub fn mailbox_name(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_graphic() && !matches!(c, '"' | '\\' | '/' | '%' | '*' | '{' | '}') || c == ' ' { c } else { '_' })
        .collect();
    let s = s.trim().to_string();
    if s.is_empty() || s.eq_ignore_ascii_case("INBOX") {
        format!("{s}_")
    } else {
        s
    }
}

/// Mail leaves of a context's MAILS view, by ascending uid.
pub fn mailbox_messages(desk: &Desk, ctx: &NodeId, now: Timestamp) -> Vec<(u64, NodeId)> {
    let Ok(tree) = desk.materialize(ctx, ViewKind::Mails, now, false) else { return Vec::new() };
    let mut out: Vec<(u64, NodeId)> = tree
        .root
        .children
        .iter()
        .filter_map(|c| c.node_id.clone())
        .map(|id| (id_seq(id.as_str()).unwrap_or(0), id))
        .collect();
    out.sort();
    out
}

/// `(name, ctx)` for every mailbox, sorted by name.
pub fn mailboxes(desk: &Desk, now: Timestamp) -> Vec<(String, NodeId)> {
    let mut entries: Vec<(String, NodeId, ())> = desk
        .contexts_in(ContextState::Active)
        .into_iter()
        .filter(|c| !mailbox_messages(desk, c, now).is_empty())
        .map(|c| (mailbox_name(&desk.context_name(&c)), c, ()))
        .collect();
    dedup_names(&mut entries, &["INBOX"]);
    let mut out: Vec<(String, NodeId)> = entries.into_iter().map(|(n, c, ())| (n, c)).collect();
    out.sort();
    out
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Atom(String),
    Quoted(String),
    List(Vec<Tok>),
}

impl Tok {
    fn text(&self) -> Option<&str> {
        match self {
            Tok::Atom(s) | Tok::Quoted(s) => Some(s),
            Tok::List(_) => None,
        }
    }
}

fn tokenize(s: &str) -> Result<Vec<Tok>, &'static str> {
    fn parse(chars: &mut std::iter::Peekable<std::str::Chars>, nested: bool) -> Result<Vec<Tok>, &'static str> {
        let mut out = Vec::new();
        loop {
            match chars.peek().copied() {
                None if nested => return Err("unbalanced parenthesis"),
                None => return Ok(out),
                Some(' ') => {
                    chars.next();
                }
                Some(')') if nested => {
                    chars.next();
                    return Ok(out);
                }
                Some(')') => return Err("unbalanced parenthesis"),
                Some('(') => {
                    chars.next();
                    out.push(Tok::List(parse(chars, true)?));
                }
                Some('"') => {
                    chars.next();
                    let mut v = String::new();
                    loop {
                        match chars.next() {
                            None => return Err("unterminated string"),
                            Some('"') => break,
                            Some('\\') => v.push(chars.next().ok_or("unterminated string")?),
                            Some(c) => v.push(c),
                        }
                    }
                    out.push(Tok::Quoted(v));
                }
                Some('{') => return Err("literals are not supported"),
                Some(_) => {
                    let mut v = String::new();
                    let mut depth = 0;
                    while let Some(&c) = chars.peek() {
                        match c {
                            '[' => depth += 1,
                            ']' => depth -= 1,
                            ' ' | ')' | '(' if depth == 0 => break,
                            _ => {}
                        }
                        v.push(c);
                        chars.next();
                    }
                    out.push(Tok::Atom(v));
                }
            }
        }
    }
    parse(&mut s.chars().peekable(), false)
}

/// Glob with `*` and `%`; names are flat, so both match any run.
fn list_matches(pattern: &str, name: &str) -> bool {
    fn go(p: &[u8], n: &[u8]) -> bool {
        match p.split_first() {
            None => n.is_empty(),
            Some((b'*' | b'%', rest)) => (0..=n.len()).any(|i| go(rest, &n[i..])),
            Some((c, rest)) => n.first().is_some_and(|d| d.eq_ignore_ascii_case(c)) && go(rest, &n[1..]),
        }
    }
    go(pattern.as_bytes(), name.as_bytes())
}

/// Parses a sequence set against `max` (the value of `*`).
fn sequence_set(s: &str, max: u64) -> Option<Vec<(u64, u64)>> {
    s.split(',')
        .map(|part| {
            let num = |x: &str| if x == "*" { Some(max) } else { x.parse::<u64>().ok().filter(|n| *n > 0) };
            let (a, b) = match part.split_once(':') {
                Some((a, b)) => (num(a)?, num(b)?),
                None => {
                    let n = num(part)?;
                    (n, n)
                }
            };
            Some((a.min(b), a.max(b)))
        })
        .collect()
}

fn quoted(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// An nstring: NIL, a quoted string, or a literal for 8-bit or multi-line text.
fn nstring(out: &mut Vec<u8>, s: Option<&str>) {
    match s {
        None => out.extend_from_slice(b"NIL"),
        Some(s) if s.bytes().all(|b| (0x20..0x7f).contains(&b)) => out.extend_from_slice(quoted(s).as_bytes()),
        Some(s) => literal(out, s.as_bytes()),
    }
}

fn literal(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(format!("{{{}}}\r\n", bytes.len()).as_bytes());
    out.extend_from_slice(bytes);
}

fn address_list(out: &mut Vec<u8>, addrs: &[Address]) {
    if addrs.is_empty() {
        out.extend_from_slice(b"NIL");
        return;
    }
    out.push(b'(');
    for a in addrs {
        out.push(b'(');
        nstring(out, a.name.as_deref());
        out.extend_from_slice(b" NIL ");
        nstring(out, Some(&a.mailbox));
        out.push(b' ');
        nstring(out, Some(&a.host));
        out.push(b')');
    }
    out.push(b')');
}

fn envelope(out: &mut Vec<u8>, raw: &[u8]) {
    let fields = header_fields(raw);
    let get = |n: &str| fields.iter().find(|(k, _)| k.eq_ignore_ascii_case(n)).map(|(_, v)| v.as_str());
    let addrs = |n: &str| get(n).map(parse_addresses).unwrap_or_default();
    let from = addrs("From");
    let sender = if get("Sender").is_some() { addrs("Sender") } else { from.clone() };
    let reply_to = if get("Reply-To").is_some() { addrs("Reply-To") } else { from.clone() };
    out.extend_from_slice(b"ENVELOPE (");
    nstring(out, get("Date"));
    out.push(b' ');
    nstring(out, get("Subject"));
    for list in [&from, &sender, &reply_to, &addrs("To"), &addrs("Cc"), &addrs("Bcc")] {
        out.push(b' ');
        address_list(out, list);
    }
    out.push(b' ');
    nstring(out, get("In-Reply-To"));
    out.push(b' ');
    nstring(out, get("Message-ID"));
    out.push(b')');
}

fn internal_date(ms: i64) -> String {
    from_ms(ms).format("%d-%b-%Y %H:%M:%S +0000").to_string()
}

fn split_header_body(raw: &[u8]) -> (&[u8], &[u8]) {
    for sep in [&b"\r\n\r\n"[..], &b"\n\n"[..]] {
        if let Some(i) = raw.windows(sep.len()).position(|w| w == sep) {
            return (&raw[..i + sep.len()], &raw[i + sep.len()..]);
        }
    }
    (raw, &[])
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Item {
    Uid,
    Flags,
    Size,
    Envelope,
    InternalDate,
    Body { section: Section, peek: bool },
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Section {
    Full,
    Header,
    Text,
}

fn fetch_items(toks: &[Tok]) -> Option<Vec<Item>> {
    let atoms: Vec<String> = match toks {
        [Tok::List(l)] => l.iter().map(|t| t.text().map(str::to_ascii_uppercase)).collect::<Option<_>>()?,
        [t] => vec![t.text()?.to_ascii_uppercase()],
        _ => return None,
    };
    let mut out = Vec::new();
    for a in atoms {
        match a.as_str() {
            "UID" => out.push(Item::Uid),
            "FLAGS" => out.push(Item::Flags),
            "RFC822.SIZE" => out.push(Item::Size),
            "ENVELOPE" => out.push(Item::Envelope),
            "INTERNALDATE" => out.push(Item::InternalDate),
            "FAST" => out.extend([Item::Flags, Item::InternalDate, Item::Size]),
            "ALL" => out.extend([Item::Flags, Item::InternalDate, Item::Size, Item::Envelope]),
            "RFC822" => out.push(Item::Body { section: Section::Full, peek: false }),
            "RFC822.HEADER" => out.push(Item::Body { section: Section::Header, peek: true }),
            "RFC822.TEXT" => out.push(Item::Body { section: Section::Text, peek: false }),
            a => {
                let (peek, rest) = match a.strip_prefix("BODY.PEEK[") {
                    Some(r) => (true, r),
                    None => (false, a.strip_prefix("BODY[")?),
                };
                let section = match rest {
                    "]" => Section::Full,
                    "HEADER]" => Section::Header,
                    "TEXT]" => Section::Text,
                    _ => return None,
                };
                out.push(Item::Body { section, peek });
            }
        }
    }
    Some(out)
}

fn item_label(item: Item) -> &'static str {
    match item {
        Item::Body { section: Section::Full, .. } => "BODY[]",
        Item::Body { section: Section::Header, .. } => "BODY[HEADER]",
        Item::Body { section: Section::Text, .. } => "BODY[TEXT]",
        _ => "",
    }
}

fn fetch(desk: &Desk, sel: &Selection, by_uid: bool, set: &str, items: &[Item], now: Timestamp) -> Option<Vec<u8>> {
    let max = if by_uid { sel.messages.last().map_or(0, |m| m.0) } else { sel.messages.len() as u64 };
    let ranges = sequence_set(set, max)?;
    let mut items = items.to_vec();
    if by_uid && !items.contains(&Item::Uid) {
        items.insert(0, Item::Uid);
    }
    let mut out = Vec::new();
    for (i, (uid, mail)) in sel.messages.iter().enumerate() {
        let key = if by_uid { *uid } else { i as u64 + 1 };
        if !ranges.iter().any(|(a, b)| (*a..=*b).contains(&key)) {
            continue;
        }
        let Ok(node) = desk.node(mail) else { continue };
        let raw = desk.content(mail).ok().flatten().unwrap_or_default();
        out.extend_from_slice(format!("* {} FETCH (", i + 1).as_bytes());
        for (n, item) in items.iter().enumerate() {
            if n > 0 {
                out.push(b' ');
            }
            match *item {
                Item::Uid => out.extend_from_slice(format!("UID {uid}").as_bytes()),
                Item::Flags => out.extend_from_slice(b"FLAGS ()"),
                Item::Size => out.extend_from_slice(format!("RFC822.SIZE {}", raw.len()).as_bytes()),
                Item::Envelope => envelope(&mut out, &raw),
                Item::InternalDate => {
                    let ms = node.attrs.int(keys::DATE).or(node.attrs.int(keys::CREATED_AT)).unwrap_or(0);
                    out.extend_from_slice(format!("INTERNALDATE \"{}\"", internal_date(ms)).as_bytes());
                }
                Item::Body { section, peek } => {
                    let (head, body) = split_header_body(&raw);
                    let part = match section {
                        Section::Full => &raw[..],
                        Section::Header => head,
                        Section::Text => body,
                    };
                    out.extend_from_slice(item_label(*item).as_bytes());
                    out.push(b' ');
                    literal(&mut out, part);
                    if !peek {
                        desk.push_access(AccessEvent { item: Some(mail.clone()), ctx: desk.current_id().cloned().unwrap_or_else(|| sel.ctx.clone()), ts: now, action: AccessAction::Open });
                    }
                }
            }
        }
        out.extend_from_slice(b")\r\n");
    }
    Some(out)
}

fn write_line(out: &mut Vec<u8>, line: &str) {
    out.extend_from_slice(line.as_bytes());
    out.extend_from_slice(b"\r\n");
}

/// Handles one command line (without CRLF).
pub fn imap_handle(access: &impl DeskAccess, session: &mut ImapSession, line: &str, now: Timestamp) -> ImapReply {
    let mut out = Vec::new();
    let line = line.trim_end_matches(['\r', '\n']);
    let (tag, rest) = line.split_once(' ').unwrap_or((line, ""));
    if tag.is_empty() || tag == "*" || tag.contains(['(', ')', '{', '"', '%', '\\']) {
        write_line(&mut out, "* BAD missing or invalid tag");
        return ImapReply { bytes: out, close: false };
    }
    session.tag = tag.to_string();
    let (cmd, args) = rest.split_once(' ').unwrap_or((rest, ""));
    let mut cmd = cmd.to_ascii_uppercase();
    let mut args = args.to_string();
    let mut by_uid = false;
    if cmd == "UID" {
        let (sub, a) = args.split_once(' ').unwrap_or((args.as_str(), ""));
        cmd = sub.to_ascii_uppercase();
        args = a.to_string();
        by_uid = true;
    }
    let read_only_cmd = matches!(cmd.as_str(), "STORE" | "APPEND" | "COPY" | "EXPUNGE" | "CREATE" | "DELETE" | "RENAME");
    if read_only_cmd && matches!(session.state, ImapState::Auth | ImapState::Selected) {
        write_line(&mut out, &format!("{tag} NO mailboxes are read-only"));
        return ImapReply { bytes: out, close: false };
    }
    let toks = match tokenize(&args) {
        Ok(t) => t,
        Err(e) => {
            write_line(&mut out, &format!("{tag} BAD {e}"));
            return ImapReply { bytes: out, close: false };
        }
    };
    let state = session.state;
    let mut close = false;
    let reply = |out: &mut Vec<u8>, status: &str, text: &str| write_line(out, &format!("{tag} {status} {text}"));
    match (cmd.as_str(), state) {
        (_, ImapState::Closed) => reply(&mut out, "BAD", "connection closing"),
        ("CAPABILITY", _) if !by_uid => {
            write_line(&mut out, &format!("* CAPABILITY {CAPABILITY}"));
            reply(&mut out, "OK", "CAPABILITY completed");
        }
        ("NOOP", _) if !by_uid => reply(&mut out, "OK", "NOOP completed"),
        ("LOGOUT", _) if !by_uid => {
            write_line(&mut out, "* BYE logging out");
            reply(&mut out, "OK", "LOGOUT completed");
            session.state = ImapState::Closed;
            session.selected = None;
            close = true;
        }
        ("LOGIN", ImapState::NotAuth) if !by_uid => match toks.as_slice() {
            [u, p] if u.text().is_some() && p.text().is_some() => {
                if u.text() == Some(session.user.as_str()) && p.text() == Some(session.password.as_str()) {
                    session.state = ImapState::Auth;
                    reply(&mut out, "OK", "LOGIN completed");
                } else {
                    reply(&mut out, "NO", "[AUTHENTICATIONFAILED] invalid credentials");
                }
            }
            _ => reply(&mut out, "BAD", "LOGIN expects user and password"),
        },
        ("LOGIN", _) => reply(&mut out, "BAD", "already authenticated"),
        ("LIST" | "LSUB", ImapState::Auth | ImapState::Selected) if !by_uid => match toks.as_slice() {
            [r, p] if r.text().is_some() && p.text().is_some() => {
                let (reference, pattern) = (r.text().unwrap_or_default(), p.text().unwrap_or_default());
                if pattern.is_empty() {
                    write_line(&mut out, &format!("* {cmd} (\\Noselect) \"/\" \"\""));
                } else {
                    let full = format!("{reference}{pattern}");
                    for (name, _) in access.read(|d| mailboxes(d, now)) {
                        if list_matches(&full, &name) {
                            write_line(&mut out, &format!("* {cmd} (\\HasNoChildren) \"/\" {}", quoted(&name)));
                        }
                    }
                }
                reply(&mut out, "OK", &format!("{cmd} completed"));
            }
            _ => reply(&mut out, "BAD", "LIST expects reference and pattern"),
        },
        ("SELECT" | "EXAMINE", ImapState::Auth | ImapState::Selected) if !by_uid => {
            let Some(name) = toks.first().and_then(Tok::text).filter(|_| toks.len() == 1) else {
                reply(&mut out, "BAD", "SELECT expects a mailbox");
                return ImapReply { bytes: out, close };
            };
            session.selected = None;
            session.state = ImapState::Auth;
            let found = access.read(|d| {
                mailboxes(d, now).into_iter().find(|(n, _)| n == name).map(|(n, c)| {
                    let messages = mailbox_messages(d, &c, now);
                    (Selection { ctx: c.clone(), name: n, read_only: true, messages }, id_seq(c.as_str()).unwrap_or(1))
                })
            });
            match found {
                Some((sel, validity)) => {
                    let uidnext = sel.messages.last().map_or(1, |m| m.0 + 1);
                    write_line(&mut out, "* FLAGS (\\Seen)");
                    write_line(&mut out, "* OK [PERMANENTFLAGS ()] read-only");
                    write_line(&mut out, &format!("* {} EXISTS", sel.messages.len()));
                    write_line(&mut out, "* 0 RECENT");
                    write_line(&mut out, &format!("* OK [UIDVALIDITY {}] UIDs valid", validity.max(1)));
                    write_line(&mut out, &format!("* OK [UIDNEXT {uidnext}] predicted next UID"));
                    reply(&mut out, "OK", &format!("[READ-ONLY] {cmd} completed"));
                    session.selected = Some(sel);
                    session.state = ImapState::Selected;
                }
                None => reply(&mut out, "NO", "no such mailbox"),
            }
        }
        ("FETCH", ImapState::Selected) => {
            let sel = session.selected.clone();
            let parsed = match (sel.as_ref(), toks.split_first()) {
                (Some(sel), Some((Tok::Atom(set), rest))) => fetch_items(rest).map(|items| (sel, set, items)),
                _ => None,
            };
            match parsed.and_then(|(sel, set, items)| access.read(|d| fetch(d, sel, by_uid, set, &items, now))) {
                Some(bytes) => {
                    out.extend(bytes);
                    reply(&mut out, "OK", &format!("{}FETCH completed", if by_uid { "UID " } else { "" }));
                }
                None => reply(&mut out, "BAD", "invalid FETCH arguments"),
            }
        }
        ("CLOSE" | "UNSELECT", ImapState::Selected) if !by_uid => {
            session.selected = None;
            session.state = ImapState::Auth;
            reply(&mut out, "OK", &format!("{cmd} completed"));
        }
        ("FETCH" | "LIST" | "LSUB" | "SELECT" | "EXAMINE" | "CLOSE" | "UNSELECT" | "STORE" | "APPEND" | "COPY" | "EXPUNGE" | "CREATE" | "DELETE" | "RENAME", _) => {
            reply(&mut out, "BAD", "command not valid in this state")
        }
        _ => reply(&mut out, "BAD", "unknown command"),
    }
    ImapReply { bytes: out, close }
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

    fn mail(i: usize) -> Vec<u8> {
        format!(
            "Message-ID: <m{i}@x.org>\r\nFrom: \"Ann B\" <ann@x.org>\r\nTo: bob@y.org\r\nSubject: note {i}\r\nDate: Mon, 1 Jan 2024 10:00:00 +0000\r\n\r\nbody {i}\r\n"
        )
        .into_bytes()
    }

    fn desk_with(counts: &[usize]) -> (RwLock<Desk>, Vec<NodeId>) {
        let mut d = Desk::in_memory(DeskConfig::default()).unwrap();
        let mut ctxs = Vec::new();
        for (k, n) in counts.iter().enumerate() {
            let c = d.create_context(&format!("ctx{k}"), None, t0()).unwrap();
            for i in 0..*n {
                d.ingest_mail(&mail(k * 100 + i), Some(&c), t0()).unwrap();
            }
            ctxs.push(c);
        }
        (RwLock::new(d), ctxs)
    }

    fn run(d: &RwLock<Desk>, s: &mut ImapSession, line: &str) -> String {
        imap_handle(d, s, line, t0()).text()
    }

    fn authed(d: &RwLock<Desk>) -> ImapSession {
        let mut s = ImapSession::new("u", "p");
        assert!(run(d, &mut s, "a LOGIN u p").starts_with("a OK"));
        s
    }

    #[test]
    fn wrong_password_is_no() {
        let (d, _) = desk_with(&[]);
        let mut s = ImapSession::new("u", "p");
        assert!(run(&d, &mut s, "a1 LOGIN u nope").starts_with("a1 NO"));
        assert_eq!(s.state, ImapState::NotAuth);
        assert!(run(&d, &mut s, "a2 LOGIN \"u\" \"p\"").starts_with("a2 OK"));
    }

    #[test]
    fn list_shows_only_mail_bearing_contexts() {
        let (d, _) = desk_with(&[2, 0, 1]);
        let mut s = authed(&d);
        let r = run(&d, &mut s, "b LIST \"\" \"*\"");
        assert_eq!(r.lines().filter(|l| l.starts_with("* LIST")).count(), 2);
        assert!(r.contains("\"ctx0\"") && r.contains("\"ctx2\""));
        assert_eq!(run(&d, &mut s, "c LIST \"\" \"ctx2\"").lines().count(), 2);
    }

    #[test]
    fn select_reports_exists() {
        let (d, _) = desk_with(&[4]);
        let mut s = authed(&d);
        let r = run(&d, &mut s, "s SELECT ctx0");
        let exists = r.lines().position(|l| l == "* 4 EXISTS").unwrap();
        let ok = r.lines().position(|l| l.starts_with("s OK")).unwrap();
        assert!(exists < ok);
        assert!(r.contains("[READ-ONLY]"));
    }

    #[test]
    fn fetch_needs_selection() {
        let (d, _) = desk_with(&[1]);
        let mut s = ImapSession::new("u", "p");
        assert!(run(&d, &mut s, "f FETCH 1 FLAGS").starts_with("f BAD"));
        let mut s = authed(&d);
        assert!(run(&d, &mut s, "f FETCH 1 FLAGS").starts_with("f BAD"));
    }

    #[test]
    fn fetch_body_returns_raw_bytes() {
        let (d, _) = desk_with(&[3]);
        let mut s = authed(&d);
        run(&d, &mut s, "s SELECT ctx0");
        let r = imap_handle(&d, &mut s, "f FETCH 2 (UID FLAGS RFC822.SIZE ENVELOPE BODY[])", t0());
        let raw = mail(1);
        let text = r.text();
        assert!(text.starts_with("* 2 FETCH (UID "));
        assert!(text.contains(&format!("RFC822.SIZE {}", raw.len())));
        assert!(text.contains("ENVELOPE (\"Mon, 1 Jan 2024 10:00:00 +0000\" \"note 1\" ((\"Ann B\" NIL \"ann\" \"x.org\"))"));
        assert!(r.bytes.windows(raw.len()).any(|w| w == raw.as_slice()));
        assert!(text.ends_with(")\r\nf OK FETCH completed\r\n"));
        let all = run(&d, &mut s, "g FETCH 1:* FLAGS");
        assert_eq!(all.lines().filter(|l| l.contains(" FETCH (")).count(), 3);
    }

    #[test]
    fn uid_fetch_and_monotone_uids() {
        let (d, ctxs) = desk_with(&[3]);
        let msgs = mailbox_messages(&d.read(), &ctxs[0], t0());
        assert!(msgs.windows(2).all(|w| w[0].0 < w[1].0));
        let mut s = authed(&d);
        run(&d, &mut s, "s EXAMINE ctx0");
        let r = run(&d, &mut s, &format!("u UID FETCH {} FLAGS", msgs[2].0));
        assert_eq!(r.lines().next().unwrap(), format!("* 3 FETCH (UID {} FLAGS ())", msgs[2].0));
    }

    #[test]
    fn read_only_and_logout() {
        let (d, _) = desk_with(&[1]);
        let mut s = authed(&d);
        run(&d, &mut s, "s SELECT ctx0");
        assert!(run(&d, &mut s, "t STORE 1 +FLAGS (\\Seen)").starts_with("t NO"));
        assert!(run(&d, &mut s, "t APPEND ctx0 (\\Seen) {3}").starts_with("t NO"));
        let r = imap_handle(&d, &mut s, "z LOGOUT", t0());
        assert!(r.close);
        assert!(r.text().starts_with("* BYE"));
        assert!(run(&d, &mut s, "q FETCH 1 FLAGS").starts_with("q BAD"));
    }

    #[test]
    fn duplicate_names_get_suffixes() {
        let mut d = Desk::in_memory(DeskConfig::default()).unwrap();
        for _ in 0..2 {
            let c = d.create_context("Projekt Ä", None, t0()).unwrap();
            d.ingest_mail(&mail(d.seq() as usize), Some(&c), t0()).unwrap();
        }
        let boxes = mailboxes(&d, t0());
        assert_eq!(boxes.len(), 2);
        assert_eq!(boxes[0].0, "Projekt _");
        assert!(boxes[1].0.starts_with("Projekt _-"));
        assert!(boxes.iter().all(|(n, _)| n.is_ascii()));
    }

    #[test]
    fn sequence_sets() {
        assert_eq!(sequence_set("1:*", 5), Some(vec![(1, 5)]));
        assert_eq!(sequence_set("3,1:2", 5), Some(vec![(3, 3), (1, 2)]));
        assert_eq!(sequence_set("0", 5), None);
        assert!(list_matches("*", "abc") && list_matches("a%", "abc") && !list_matches("b*", "abc"));
    }
}
