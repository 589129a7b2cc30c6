//! Just enough RFC 5322 to thread and list mail: header unfolding, the
//! threading headers, address lists, and mbox splitting.

use chrono::DateTime;
use serde::{Deserialize, Serialize};

use crate::blobs::content_hash;
use crate::clock::Timestamp;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MailHeader {
    pub message_id: String,
    pub in_reply_to: Option<String>,
    pub references: Vec<String>,
    pub from: String,
    pub to: String,
    pub subject: String,
    pub date: Option<Timestamp>,
    /// The Date header as written, for ENVELOPE.
    pub date_raw: String,
}

/// Unfolded `(name, value)` header pairs in order, up to the first blank line.
pub fn header_fields(raw: &[u8]) -> Vec<(String, String)> {
    let text = String::from_utf8_lossy(raw);
    let mut out: Vec<(String, String)> = Vec::new();
    for line in text.split('\n') {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            break;
        }
        if line.starts_with([' ', '\t']) {
            if let Some((_, v)) = out.last_mut() {
                v.push(' ');
                v.push_str(line.trim());
            }
            continue;
        }
        if let Some((name, value)) = line.split_once(':') {
            out.push((name.trim().to_string(), value.trim().to_string()));
        }
    }
    out
}

/// Every `<...>` message id in `value`, brackets stripped.
pub fn angle_ids(value: &str) -> Vec<String> {
    let mut ids = Vec::new();
    let mut rest = value;
    while let Some(start) = rest.find('<') {
        let Some(len) = rest[start..].find('>') else { break };
        let id = rest[start + 1..start + len].trim();
        if !id.is_empty() {
            ids.push(id.to_string());
        }
        rest = &rest[start + len + 1..];
    }
    ids
}

fn first_id(value: &str) -> Option<String> {
    angle_ids(value).into_iter().next().or_else(|| {
        let v = value.trim();
        (!v.is_empty() && !v.contains(char::is_whitespace)).then(|| v.to_string())
    })
}

pub fn parse_header(raw: &[u8]) -> MailHeader {
    let mut h = MailHeader::default();
    for (name, value) in header_fields(raw) {
        match name.to_ascii_lowercase().as_str() {
            "message-id" => h.message_id = first_id(&value).unwrap_or_default(),
            "in-reply-to" => h.in_reply_to = first_id(&value),
            "references" => h.references = angle_ids(&value),
            "from" => h.from = value,
            "to" => h.to = value,
            "subject" => h.subject = value,
            "date" => {
                h.date = DateTime::parse_from_rfc2822(&value).ok().map(|d| d.to_utc());
                h.date_raw = value;
            }
            _ => {}
        }
    }
    if h.message_id.is_empty() {
        h.message_id = format!("{}@cspaces.invalid", &content_hash(raw)[..32]);
    }
    h
}

/// One parsed mailbox: display name, local part, domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Address {
    pub name: Option<String>,
    pub mailbox: String,
    pub host: String,
}

/// Splits an address-list header on top-level commas.
pub fn parse_addresses(value: &str) -> Vec<Address> {
    let mut parts = Vec::new();
    let (mut depth, mut quoted, mut start) = (0i32, false, 0);
    for (i, c) in value.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '<' if !quoted => depth += 1,
            '>' if !quoted => depth -= 1,
            ',' if !quoted && depth == 0 => {
                parts.push(&value[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&value[start..]);
    parts
        .into_iter()
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (name, addr) = match (p.find('<'), p.rfind('>')) {
                (Some(a), Some(b)) if a < b => {
                    let name = p[..a].trim().trim_matches('"').trim();
                    ((!name.is_empty()).then(|| name.to_string()), &p[a + 1..b])
                }
                _ => (None, p),
            };
            let (mailbox, host) = addr.trim().split_once('@').unwrap_or((addr.trim(), ""));
            Address { name, mailbox: mailbox.to_string(), host: host.to_string() }
        })
        .collect()
}

/// Splits an mbox file into raw messages, undoing `>From ` quoting.
pub fn split_mbox(data: &[u8]) -> Vec<Vec<u8>> {
    let text = String::from_utf8_lossy(data);
    let mut out = Vec::new();
    let mut cur: Option<String> = None;
    let mut prev_blank = true;
    for line in text.split_inclusive('\n') {
        if prev_blank && line.starts_with("From ") {
            if let Some(m) = cur.take() {
                out.push(trim_separator(m).into_bytes());
            }
            cur = Some(String::new());
            prev_blank = false;
            continue;
        }
        prev_blank = line.trim_end_matches(['\r', '\n']).is_empty();
        if let Some(m) = cur.as_mut() {
            match line.strip_prefix('>') {
                Some(rest) if rest.trim_start_matches('>').starts_with("From ") => m.push_str(rest),
                _ => m.push_str(line),
            }
        }
    }
    if let Some(m) = cur {
        out.push(trim_separator(m).into_bytes());
    }
    out
}

fn trim_separator(mut m: String) -> String {
    if m.ends_with("\r\n\r\n") {
        m.truncate(m.len() - 2);
    } else if m.ends_with("\n\n") {
        m.truncate(m.len() - 1);
    }
    m
}
