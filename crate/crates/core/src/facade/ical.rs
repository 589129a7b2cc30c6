//! iCalendar and vCard text for EVENT and CONTACT items, plus the small
//! parsers ingest uses to read them back.

use chrono::{NaiveDate, NaiveDateTime};

use crate::clock::{from_ms, to_ms, Timestamp};
use crate::desk::keys;
use crate::error::{Error, Result};
use crate::graph::{Attrs, Node, NodeKind};

const FOLD_AT: usize = 75;

/// Folds one content line at 75 octets without splitting a UTF-8 sequence;
/// continuation lines start with a space.
pub fn fold(line: &str) -> String {
    let mut out = String::with_capacity(line.len() + line.len() / FOLD_AT * 3);
    let mut width = 0;
    for c in line.chars() {
        let n = c.len_utf8();
        if width + n > FOLD_AT {
            out.push_str("\r\n ");
            width = 1;
        }
        out.push(c);
        width += n;
    }
    out
}

/// Joins folded continuation lines.
pub fn unfold(text: &str) -> String {
    text.replace("\r\n ", "").replace("\r\n\t", "").replace("\n ", "").replace("\n\t", "")
}

pub fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            ';' => out.push_str("\\;"),
            ',' => out.push_str("\\,"),
            '\n' => out.push_str("\\n"),
            '\r' => {}
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n' | 'N') => out.push('\n'),
            Some(c) => out.push(c),
            None => out.push('\\'),
        }
    }
    out
}

fn utc_stamp(ms: i64) -> String {
    from_ms(ms).format("%Y%m%dT%H%M%SZ").to_string()
}

fn push(out: &mut String, line: &str) {
    out.push_str(&fold(line));
    out.push_str("\r\n");
}

pub fn serialize_icalendar(node: &Node) -> Result<String> {
    if node.kind != NodeKind::Event {
        return Err(Error::KindMismatch);
    }
    let a = &node.attrs;
    let start = a.int(keys::START).ok_or(Error::MissingAttr("start"))?;
    let mut out = String::new();
    push(&mut out, "BEGIN:VCALENDAR");
    push(&mut out, "VERSION:2.0");
    push(&mut out, "PRODID:-//cspaces//EN");
    push(&mut out, "BEGIN:VEVENT");
    push(&mut out, &format!("UID:{}", node.id));
    push(&mut out, &format!("DTSTAMP:{}", utc_stamp(a.int(keys::CREATED_AT).unwrap_or(start))));
    push(&mut out, &format!("DTSTART:{}", utc_stamp(start)));
    if let Some(end) = a.int(keys::END) {
        push(&mut out, &format!("DTEND:{}", utc_stamp(end)));
    }
    let summary = a.str(keys::SUMMARY).or(a.str(keys::NAME)).unwrap_or_default();
    push(&mut out, &format!("SUMMARY:{}", escape_text(summary)));
    push(&mut out, "END:VEVENT");
    push(&mut out, "END:VCALENDAR");
    Ok(out)
}

/// Multi-valued attributes are stored newline-joined.
pub fn list_attr<'a>(a: &'a Attrs, key: &str) -> Vec<&'a str> {
    a.str(key).map(|s| s.split('\n').filter(|v| !v.is_empty()).collect()).unwrap_or_default()
}

pub fn serialize_vcard(node: &Node) -> Result<String> {
    if node.kind != NodeKind::Contact {
        return Err(Error::KindMismatch);
    }
    let a = &node.attrs;
    let name = a.str(keys::NAME).map(str::trim).filter(|n| !n.is_empty()).ok_or(Error::MissingAttr("name"))?;
    let mut words: Vec<&str> = name.split_whitespace().collect();
    let family = if words.len() > 1 { words.pop().unwrap_or_default() } else { "" };
    let mut out = String::new();
    push(&mut out, "BEGIN:VCARD");
    push(&mut out, "VERSION:3.0");
    push(&mut out, &format!("FN:{}", escape_text(name)));
    push(&mut out, &format!("N:{};{};;;", escape_text(family), escape_text(&words.join(" "))));
    for e in list_attr(a, keys::EMAILS) {
        push(&mut out, &format!("EMAIL:{}", escape_text(e)));
    }
    for t in list_attr(a, keys::TELS) {
        push(&mut out, &format!("TEL:{}", escape_text(t)));
    }
    push(&mut out, &format!("UID:{}", node.id));
    push(&mut out, "END:VCARD");
    Ok(out)
}

/// Content lines `(name, params, value)` of an unfolded document.
fn content_lines(text: &str) -> Vec<(String, String, String)> {
    unfold(text)
        .lines()
        .filter_map(|l| {
            let (head, value) = l.split_once(':')?;
            let (name, params) = head.split_once(';').unwrap_or((head, ""));
            Some((name.trim().to_ascii_uppercase(), params.to_string(), value.trim_end_matches('\r').to_string()))
        })
        .collect()
}

pub fn parse_ical_time(value: &str) -> Option<Timestamp> {
    let v = value.trim();
    if let Some(z) = v.strip_suffix('Z') {
        return NaiveDateTime::parse_from_str(z, "%Y%m%dT%H%M%S").ok().map(|t| t.and_utc());
    }
    NaiveDateTime::parse_from_str(v, "%Y%m%dT%H%M%S")
        .map(|t| t.and_utc())
        .ok()
        .or_else(|| NaiveDate::parse_from_str(v, "%Y%m%d").ok().and_then(|d| d.and_hms_opt(0, 0, 0)).map(|t| t.and_utc()))
}

/// Attribute sets of every VEVENT with a parseable DTSTART.
pub fn parse_events(text: &str) -> Vec<Attrs> {
    let mut out = Vec::new();
    let mut cur: Option<Attrs> = None;
    for (name, _, value) in content_lines(text) {
        match (name.as_str(), value.as_str()) {
            ("BEGIN", "VEVENT") => cur = Some(Attrs::new()),
            ("END", "VEVENT") => {
                if let Some(a) = cur.take().filter(|a| a.get(keys::START).is_some()) {
                    out.push(a);
                }
            }
            _ => {
                let Some(a) = cur.as_mut() else { continue };
                match name.as_str() {
                    "UID" => a.set(keys::UID, value.as_str()),
                    "SUMMARY" => {
                        let s = unescape_text(&value);
                        a.set(keys::NAME, s.as_str());
                        a.set(keys::SUMMARY, s);
                    }
                    "DTSTART" => {
                        if let Some(t) = parse_ical_time(&value) {
                            a.set(keys::START, to_ms(t));
                        }
                    }
                    "DTEND" => {
                        if let Some(t) = parse_ical_time(&value) {
                            a.set(keys::END, to_ms(t));
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    out
}

/// Attribute sets of every VCARD with a nonempty FN.
pub fn parse_cards(text: &str) -> Vec<Attrs> {
    let mut out = Vec::new();
    let mut cur: Option<(Attrs, Vec<String>, Vec<String>)> = None;
    for (name, _, value) in content_lines(text) {
        match (name.as_str(), value.as_str()) {
            ("BEGIN", "VCARD") => cur = Some((Attrs::new(), Vec::new(), Vec::new())),
            ("END", "VCARD") => {
                if let Some((mut a, emails, tels)) = cur.take() {
                    if !emails.is_empty() {
                        a.set(keys::EMAILS, emails.join("\n"));
                    }
                    if !tels.is_empty() {
                        a.set(keys::TELS, tels.join("\n"));
                    }
                    if a.str(keys::NAME).is_some_and(|n| !n.trim().is_empty()) {
                        out.push(a);
                    }
                }
            }
            _ => {
                let Some((a, emails, tels)) = cur.as_mut() else { continue };
                match name.as_str() {
                    "FN" => a.set(keys::NAME, unescape_text(&value)),
                    "UID" => a.set(keys::UID, value.as_str()),
                    "EMAIL" => emails.push(unescape_text(&value)),
                    "TEL" => tels.push(unescape_text(&value)),
                    _ => {}
                }
            }
        }
    }
    out
}
