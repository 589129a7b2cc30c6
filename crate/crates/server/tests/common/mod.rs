//! Raw-socket HTTP, SSE and IMAP clients plus an in-process server harness.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use cspaces_core::clock::{from_ms, parse_ts, to_ms, Timestamp};
use cspaces_core::facade::basic_header;
use cspaces_core::{Desk, DeskConfig};
use cspaces_server::{start, AppState, Running};

pub const USER: &str = "ann";
pub const PASSWORD: &str = "pw";

pub fn t0() -> Timestamp {
    parse_ts("2024-01-08T09:00:00Z").unwrap()
}

pub struct Server {
    pub rt: tokio::runtime::Runtime,
    pub running: Option<Running>,
    pub state: AppState,
    pub clock: Arc<AtomicI64>,
}

impl Server {
    pub fn start(desk: Desk) -> Server {
        let clock = Arc::new(AtomicI64::new(to_ms(t0())));
        let c = clock.clone();
        let state = AppState::new(desk, USER, PASSWORD).with_clock(Arc::new(move || from_ms(c.load(Ordering::SeqCst))));
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        let running = rt.block_on(start(state.clone(), "127.0.0.1:0", "127.0.0.1:0", None)).unwrap();
        Server { rt, running: Some(running), state, clock }
    }

    pub fn empty() -> Server {
        Server::start(Desk::in_memory(DeskConfig::default()).unwrap())
    }

    pub fn http_addr(&self) -> SocketAddr {
        self.running.as_ref().unwrap().http
    }

    pub fn imap_addr(&self) -> SocketAddr {
        self.running.as_ref().unwrap().imap
    }

    pub fn set_now(&self, t: Timestamp) {
        self.clock.store(to_ms(t), Ordering::SeqCst);
    }

    pub fn now(&self) -> Timestamp {
        from_ms(self.clock.load(Ordering::SeqCst))
    }

    pub fn http(&self) -> Http {
        Http { addr: self.http_addr(), auth: Some(basic_header(USER, PASSWORD)) }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(r) = self.running.take() {
            self.rt.block_on(r.shutdown());
        }
    }
}

#[derive(Debug)]
pub struct Response {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Response {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", self.text()))
    }

    pub fn hrefs(&self) -> Vec<String> {
        self.text()
            .split("<D:href>")
            .skip(1)
            .filter_map(|s| s.split("</D:href>").next())
            .map(|h| percent_decode(h))
            .collect()
    }

    pub fn response_count(&self) -> usize {
        self.text().matches("<D:response>").count()
    }
}

fn percent_decode(s: &str) -> String {
    percent_encoding::percent_decode_str(&s.replace("&amp;", "&")).decode_utf8_lossy().into_owned()
}

#[derive(Clone)]
pub struct Http {
    pub addr: SocketAddr,
    pub auth: Option<String>,
}

fn read_head(r: &mut impl BufRead) -> (u16, Vec<(String, String)>) {
    let mut line = String::new();
    r.read_line(&mut line).unwrap();
    let status = line.split_whitespace().nth(1).and_then(|s| s.parse().ok()).unwrap_or_else(|| panic!("bad status line {line:?}"));
    let mut headers = Vec::new();
    loop {
        line.clear();
        r.read_line(&mut line).unwrap();
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        let (k, v) = l.split_once(':').unwrap();
        headers.push((k.trim().to_string(), v.trim().to_string()));
    }
    (status, headers)
}

fn read_chunk(r: &mut impl BufRead) -> Option<Vec<u8>> {
    let mut line = String::new();
    if r.read_line(&mut line).ok()? == 0 {
        return None;
    }
    let size = usize::from_str_radix(line.trim().split(';').next()?, 16).ok()?;
    let mut buf = vec![0; size + 2];
    r.read_exact(&mut buf).ok()?;
    buf.truncate(size);
    (size > 0).then_some(buf)
}

impl Http {
    pub fn without_auth(&self) -> Http {
        Http { addr: self.addr, auth: None }
    }

    fn send(&self, method: &str, path: &str, headers: &[(&str, &str)], body: &[u8], keep_open: bool) -> TcpStream {
        let mut s = TcpStream::connect(self.addr).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(20))).unwrap();
        let mut req = format!("{method} {path} HTTP/1.1\r\nHost: {}\r\nContent-Length: {}\r\n", self.addr, body.len());
        if !keep_open {
            req.push_str("Connection: close\r\n");
        }
        if let Some(a) = &self.auth {
            req.push_str(&format!("Authorization: {a}\r\n"));
        }
        for (k, v) in headers {
            req.push_str(&format!("{k}: {v}\r\n"));
        }
        req.push_str("\r\n");
        s.write_all(req.as_bytes()).unwrap();
        s.write_all(body).unwrap();
        s
    }

    pub fn request(&self, method: &str, path: &str, headers: &[(&str, &str)], body: &[u8]) -> Response {
        let s = self.send(method, path, headers, body, false);
        let mut r = BufReader::new(s);
        let (status, headers) = read_head(&mut r);
        let chunked = headers.iter().any(|(k, v)| k.eq_ignore_ascii_case("transfer-encoding") && v.contains("chunked"));
        let mut body = Vec::new();
        if method == "HEAD" {
        } else if chunked {
            while let Some(c) = read_chunk(&mut r) {
                body.extend(c);
            }
        } else if let Some(n) = headers.iter().find(|(k, _)| k.eq_ignore_ascii_case("content-length")).and_then(|(_, v)| v.parse::<usize>().ok()) {
            body.resize(n, 0);
            r.read_exact(&mut body).unwrap();
        } else {
            r.read_to_end(&mut body).unwrap();
        }
        Response { status, headers, body }
    }

    pub fn get(&self, path: &str) -> Response {
        self.request("GET", path, &[], b"")
    }

    pub fn post(&self, path: &str, body: serde_json::Value) -> Response {
        self.request("POST", path, &[("Content-Type", "application/json")], body.to_string().as_bytes())
    }

    pub fn propfind(&self, path: &str, depth: &str) -> Response {
        self.request("PROPFIND", path, &[("Depth", depth)], b"")
    }

    pub fn events(&self, last_event_id: Option<u64>) -> SseClient {
        let id = last_event_id.map(|n| n.to_string());
        let headers: Vec<(&str, &str)> = id.iter().map(|v| ("Last-Event-ID", v.as_str())).collect();
        let s = self.send("GET", "/api/events", &headers, b"", true);
        let mut reader = BufReader::new(s);
        let (status, headers) = read_head(&mut reader);
        assert_eq!(status, 200);
        let ct = headers.iter().find(|(k, _)| k.eq_ignore_ascii_case("content-type")).map(|(_, v)| v.clone());
        assert_eq!(ct.as_deref(), Some("text/event-stream"));
        SseClient { reader, pending: String::new() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SseEvent {
    pub id: Option<u64>,
    pub event: String,
    pub data: String,
    pub comment: bool,
}

pub struct SseClient {
    reader: BufReader<TcpStream>,
    pending: String,
}

impl SseClient {
    /// Next blank-line-delimited block, comments included; `None` on timeout.
    pub fn next_block(&mut self, timeout: Duration) -> Option<SseEvent> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(pos) = self.pending.find("\n\n") {
                let block: String = self.pending.drain(..pos + 2).collect();
                let mut ev = SseEvent { id: None, event: String::new(), data: String::new(), comment: false };
                for line in block.lines() {
                    if let Some(v) = line.strip_prefix("id:") {
                        ev.id = v.trim().parse().ok();
                    } else if let Some(v) = line.strip_prefix("event:") {
                        ev.event = v.trim().to_string();
                    } else if let Some(v) = line.strip_prefix("data:") {
                        ev.data.push_str(v.trim_start());
                    } else if line.starts_with(':') {
                        ev.comment = true;
                    }
                }
                return Some(ev);
            }
            let left = deadline.checked_duration_since(Instant::now())?;
            self.reader.get_ref().set_read_timeout(Some(left.max(Duration::from_millis(1)))).ok()?;
            let chunk = read_chunk(&mut self.reader)?;
            self.pending.push_str(&String::from_utf8_lossy(&chunk).replace("\r\n", "\n"));
        }
    }

    /// Next non-comment event.
    pub fn next_event(&mut self, timeout: Duration) -> Option<SseEvent> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.checked_duration_since(Instant::now())?;
            let b = self.next_block(left)?;
            if !b.comment || b.id.is_some() {
                return Some(b);
            }
        }
    }

    /// Every event arriving until `quiet` passes with none.
    pub fn drain(&mut self, quiet: Duration) -> Vec<SseEvent> {
        std::iter::from_fn(|| self.next_event(quiet)).collect()
    }
}

pub struct Imap {
    reader: BufReader<TcpStream>,
    next_tag: u32,
}

impl Imap {
    pub fn connect(addr: SocketAddr) -> (Imap, String) {
        let s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(20))).unwrap();
        let mut imap = Imap { reader: BufReader::new(s), next_tag: 1 };
        let greeting = imap.line().unwrap();
        (imap, greeting)
    }

    fn line(&mut self) -> Option<String> {
        let mut buf = Vec::new();
        if self.reader.read_until(b'\n', &mut buf).ok()? == 0 {
            return None;
        }
        // a line ending in {n} announces an n-byte literal that belongs to it
        loop {
            let text = String::from_utf8_lossy(&buf).into_owned();
            let trimmed = text.trim_end_matches("\r\n");
            let Some(n) = trimmed.strip_suffix('}').and_then(|t| t.rsplit_once('{')).and_then(|(_, n)| n.parse::<usize>().ok()) else {
                break;
            };
            let mut lit = vec![0; n];
            self.reader.read_exact(&mut lit).ok()?;
            buf.extend(lit);
            self.reader.read_until(b'\n', &mut buf).ok()?;
        }
        Some(String::from_utf8_lossy(&buf).into_owned())
    }

    /// Sends `command` under a fresh tag; returns the untagged lines and the
    /// tagged completion.
    pub fn cmd(&mut self, command: &str) -> (Vec<String>, String) {
        let tag = format!("a{:03}", self.next_tag);
        self.next_tag += 1;
        self.raw(&format!("{tag} {command}\r\n"));
        let mut untagged = Vec::new();
        loop {
            let l = self.line().unwrap_or_else(|| panic!("connection closed during {command:?}"));
            if l.starts_with(&format!("{tag} ")) {
                return (untagged, l.trim_end().to_string());
            }
            untagged.push(l);
        }
    }

    pub fn raw(&mut self, text: &str) {
        self.reader.get_mut().write_all(text.as_bytes()).unwrap();
    }

    pub fn next_line(&mut self) -> Option<String> {
        self.line()
    }

    pub fn at_eof(&mut self) -> bool {
        self.line().is_none()
    }
}
