//! Scripted runs against a desk on a virtual clock.
//!
//! A script holds one JSON object per line; blank lines and lines starting
//! with `#` are skipped. Every step has an `action` and an `at`, either an
//! RFC 3339 time or `+<n>d` / `+<n>h` relative to the first step. Times
//! must not decrease. Objects are named with `"as": "name"` and referenced
//! as `"@name"`; a bare string is tried as a context name, then as an id.
//!
//! ```text
//! {"at": "2024-01-08T09:00:00Z", "action": "create-context", "name": "XY", "as": "xy"}
//! {"at": "+0d", "action": "add-item", "ctx": "@xy", "name": "final.pdf", "pinned": true, "as": "final"}
//! {"at": "+200d", "action": "tidyup"}
//! {"at": "+200d", "action": "assert", "kind": "measure", "ctx": "@xy", "item": "@final", "is": "KEEP"}
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::clock::{parse_ts, plus_days, Timestamp};
use crate::context::{ContextState, Origin, Side};
use crate::desk::{keys, Desk};
use crate::error::Error;
use crate::forgetting::{ActionKind, Measure, ReorgReport};
use crate::graph::{Attrs, EdgeLabel, NodeId, NodeKind};
use crate::ingest::{self, Source};

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
    /// True for a failed `assert`, false for a malformed or rejected step.
    pub assertion: bool,
}

impl std::fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let what = if self.assertion { "assertion failed" } else { "step failed" };
        write!(f, "line {}: {what}: {}", self.line, self.message)
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Clone, Debug, Default)]
pub struct ScenarioOutcome {
    pub steps: usize,
    pub asserts: usize,
    pub reports: Vec<ReorgReport>,
    pub names: BTreeMap<String, NodeId>,
    pub last_at: Option<Timestamp>,
}

pub struct Scenario<'a> {
    desk: &'a mut Desk,
    base_dir: PathBuf,
    start: Option<Timestamp>,
    now: Option<Timestamp>,
    outcome: ScenarioOutcome,
}

type StepResult = std::result::Result<(), (String, bool)>;

fn fail<T>(msg: impl Into<String>) -> std::result::Result<T, (String, bool)> {
    Err((msg.into(), false))
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> StepResult {
    if ok {
        Ok(())
    } else {
        Err((msg(), true))
    }
}

fn from_err(e: Error) -> (String, bool) {
    (format!("{}: {e}", e.code()), false)
}

impl<'a> Scenario<'a> {
    pub fn new(desk: &'a mut Desk, base_dir: &Path) -> Scenario<'a> {
        Scenario { desk, base_dir: base_dir.to_path_buf(), start: None, now: None, outcome: ScenarioOutcome::default() }
    }

    pub fn run_text(mut self, text: &str) -> std::result::Result<ScenarioOutcome, ScenarioError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let wrap = |(message, assertion): (String, bool)| ScenarioError { line: i + 1, message, assertion };
            let step: Value = serde_json::from_str(line).map_err(|e| wrap((format!("bad JSON: {e}"), false)))?;
            self.step(&step).map_err(wrap)?;
            self.outcome.steps += 1;
        }
        self.outcome.last_at = self.now;
        Ok(self.outcome)
    }

    fn time(&mut self, at: Option<&str>) -> std::result::Result<Timestamp, (String, bool)> {
        let t = match at {
            Some(rel) if rel.starts_with('+') => {
                let Some(start) = self.start else { return fail("relative `at` before any absolute time") };
                let (num, unit) = rel[1..].split_at(rel.len().saturating_sub(2));
                let n: f64 = num.parse().map_err(|_| (format!("bad relative time {rel:?}"), false))?;
                match unit {
                    "d" => plus_days(start, n),
                    "h" => plus_days(start, n / 24.0),
                    _ => return fail(format!("bad relative time {rel:?}")),
                }
            }
            Some(abs) => parse_ts(abs).map_err(|_| (format!("bad time {abs:?}"), false))?,
            None => match self.now {
                Some(t) => t,
                None => return fail("first step needs `at`"),
            },
        };
        if self.now.is_some_and(|n| t < n) {
            return fail("`at` must not decrease");
        }
        self.start.get_or_insert(t);
        self.now = Some(t);
        Ok(t)
    }

    fn resolve(&self, r: &str) -> std::result::Result<NodeId, (String, bool)> {
        if let Some(name) = r.strip_prefix('@') {
            return self.outcome.names.get(name).cloned().ok_or_else(|| (format!("unknown reference @{name}"), false));
        }
        if let Some(c) = self.desk.find_context_by_name(r) {
            return Ok(c);
        }
        let id = NodeId::new(r);
        if self.desk.graph().contains_node(&id) {
            Ok(id)
        } else {
            fail(format!("unknown object {r:?}"))
        }
    }

    fn name(&mut self, step: &Value, id: &NodeId) {
        if let Some(a) = step.get("as").and_then(Value::as_str) {
            self.outcome.names.insert(a.to_string(), id.clone());
        }
    }

    fn step(&mut self, s: &Value) -> StepResult {
        let str_of = |k: &str| s.get(k).and_then(Value::as_str);
        let now = self.time(str_of("at"))?;
        let need = |k: &str| str_of(k).ok_or_else(|| (format!("missing `{k}`"), false));
        let action = need("action")?;
        match action {
            "create-context" => {
                let parent = str_of("parent").map(|p| self.resolve(p)).transpose()?;
                let id = self.desk.create_context(need("name")?, parent.as_ref(), now).map_err(from_err)?;
                self.name(s, &id);
            }
            "add-item" => {
                let ctx = self.resolve(need("ctx")?)?;
                let strength = s.get("strength").and_then(Value::as_f64).unwrap_or(1.0);
                let item = match str_of("item") {
                    Some(r) => {
                        let item = self.resolve(r)?;
                        self.desk.add_item(&ctx, &item, strength, Origin::User, now).map_err(from_err)?;
                        item
                    }
                    None => {
                        let kind = match str_of("kind") {
                            Some(k) => NodeKind::parse(k).ok_or_else(|| (format!("unknown kind {k:?}"), false))?,
                            None => NodeKind::File,
                        };
                        let mut attrs = Attrs::new().with(keys::NAME, need("name")?);
                        if let Some(u) = str_of("uri") {
                            attrs.set(keys::URI, u);
                        }
                        if let Some(start) = str_of("start") {
                            attrs.set(keys::START, crate::clock::to_ms(parse_ts(start).map_err(|_| (format!("bad start {start:?}"), false))?));
                        }
                        let content = str_of("content").map(str::as_bytes).or(match kind {
                            NodeKind::File | NodeKind::Note => Some(b"".as_slice()),
                            _ => None,
                        });
                        self.desk.create_item(kind, attrs, content, Some((&ctx, strength, Origin::User)), now).map_err(from_err)?
                    }
                };
                if s.get("pinned").and_then(Value::as_bool) == Some(true) {
                    self.desk.set_pinned(&ctx, &item, true, now).map_err(from_err)?;
                }
                self.name(s, &item);
            }
            "pin" | "unpin" => {
                let (ctx, item) = (self.resolve(need("ctx")?)?, self.resolve(need("item")?)?);
                self.desk.set_pinned(&ctx, &item, action == "pin", now).map_err(from_err)?;
            }
            "touch" => {
                let (ctx, item) = (self.resolve(need("ctx")?)?, self.resolve(need("item")?)?);
                self.desk.touch(&item, &ctx, now).map_err(from_err)?;
            }
            "switch" => {
                let ctx = self.resolve(need("ctx")?)?;
                self.desk.set_current(&ctx, now).map_err(from_err)?;
            }
            "merge" => {
                let (src, dst) = (self.resolve(need("src")?)?, self.resolve(need("dst")?)?);
                self.desk.merge_contexts(&src, &dst, now).map_err(from_err)?;
            }
            "split" => {
                let ctx = self.resolve(need("ctx")?)?;
                let mut assignment = BTreeMap::new();
                for (side, key) in [(Side::A, "a"), (Side::B, "b")] {
                    for r in s.get(key).and_then(Value::as_array).into_iter().flatten() {
                        let r = r.as_str().ok_or_else(|| (format!("`{key}` must list references"), false))?;
                        assignment.insert(self.resolve(r)?, side);
                    }
                }
                let (a, b) = self.desk.split_context(&ctx, need("name_a")?, need("name_b")?, &assignment, now).map_err(from_err)?;
                if let Some(n) = str_of("as_a") {
                    self.outcome.names.insert(n.to_string(), a);
                }
                if let Some(n) = str_of("as_b") {
                    self.outcome.names.insert(n.to_string(), b);
                }
            }
            "retract" => {
                let ctx = self.resolve(need("ctx")?)?;
                self.desk.retract_context(&ctx, now).map_err(from_err)?;
            }
            "ingest-mail" => {
                let ctx = str_of("ctx").map(|c| self.resolve(c)).transpose()?;
                let raw = match (str_of("raw"), str_of("file")) {
                    (Some(r), None) => r.replace("\\n", "\r\n").into_bytes(),
                    (None, Some(f)) => std::fs::read(self.base_dir.join(f)).map_err(|e| (format!("{f}: {e}"), false))?,
                    _ => return fail("ingest-mail needs one of `raw` or `file`"),
                };
                let (id, _) = self.desk.ingest_mail(&raw, ctx.as_ref(), now).map_err(from_err)?;
                self.name(s, &id);
            }
            "ingest" => {
                let source = match need("source")? {
                    "dir" => Source::Dir,
                    "mbox" => Source::Mbox,
                    "ics" => Source::Ics,
                    "vcf" => Source::Vcf,
                    "bookmarks" => Source::Bookmarks,
                    other => return fail(format!("unknown source {other:?}")),
                };
                let ctx = ingest::context_by_name(self.desk, need("context")?, now).map_err(from_err)?;
                ingest::ingest(self.desk, source, &self.base_dir.join(need("path")?), Some(&ctx), now).map_err(from_err)?;
            }
            "tidyup" => {
                let dry = s.get("dry_run").and_then(Value::as_bool).unwrap_or(false);
                let report = if dry { self.desk.preview_tidy_up(now) } else { self.desk.tidy_up(now) }.map_err(from_err)?;
                self.outcome.reports.push(report);
            }
            "assert" => {
                self.assert(s, now)?;
                self.outcome.asserts += 1;
            }
            other => return fail(format!("unknown action {other:?}")),
        }
        Ok(())
    }

    /// Items matched by `item` (one reference) or `item_name` (every item
    /// with that name, at least one).
    fn items(&self, s: &Value) -> std::result::Result<Vec<NodeId>, (String, bool)> {
        if let Some(r) = s.get("item").and_then(Value::as_str) {
            return Ok(vec![self.resolve(r)?]);
        }
        let Some(name) = s.get("item_name").and_then(Value::as_str) else { return fail("assert needs `item` or `item_name`") };
        let ids: Vec<NodeId> = self
            .desk
            .graph()
            .nodes()
            .filter(|n| n.kind.is_item() && n.attrs.str(keys::NAME) == Some(name))
            .map(|n| n.id.clone())
            .collect();
        if ids.is_empty() {
            return Err((format!("no item named {name:?}"), true));
        }
        Ok(ids)
    }

    fn assert(&mut self, s: &Value, now: Timestamp) -> StepResult {
        let str_of = |k: &str| s.get(k).and_then(Value::as_str);
        let need = |k: &str| str_of(k).ok_or_else(|| (format!("missing `{k}`"), false));
        let measure_of = |k: &str| -> std::result::Result<Option<Measure>, (String, bool)> {
            str_of(k).map(|m| Measure::parse(m).ok_or_else(|| (format!("unknown measure {m:?}"), false))).transpose()
        };
        match need("kind")? {
            "measure" => {
                let (is, not) = (measure_of("is")?, measure_of("not")?);
                let ctx = str_of("ctx").map(|c| self.resolve(c)).transpose()?;
                for item in self.items(s)? {
                    let ms = match &ctx {
                        Some(c) => vec![self.desk.membership(&item, c).ok_or_else(|| (format!("{item} is not a member of {c}"), true))?],
                        None => self.desk.memberships_of(&item),
                    };
                    check(!ms.is_empty(), || format!("{item} has no memberships"))?;
                    for m in ms {
                        check(is.is_none_or(|x| m.measure == x), || format!("{} in {}: measure {} expected {}", m.item, m.ctx, m.measure.as_str(), is.map_or("", Measure::as_str)))?;
                        check(not.is_none_or(|x| m.measure != x), || format!("{} in {}: measure is {}", m.item, m.ctx, m.measure.as_str()))?;
                    }
                }
            }
            "mb" => {
                let (ctx, item) = (self.resolve(need("ctx")?)?, self.resolve(need("item")?)?);
                let expect = s.get("approx").and_then(Value::as_f64).ok_or_else(|| ("missing `approx`".to_string(), false))?;
                let tol = s.get("tol").and_then(Value::as_f64).unwrap_or(1e-4);
                let m = self.desk.membership(&item, &ctx).ok_or_else(|| (format!("{item} is not a member of {ctx}"), true))?;
                let mb = self.desk.memory_buoyancy(&m, now).map_err(from_err)?;
                check((mb - expect).abs() <= tol, || format!("MB {mb} not within {tol} of {expect}"))?;
            }
            "state" => {
                let ctx = self.resolve(need("ctx")?)?;
                let want = ContextState::parse(need("is")?).ok_or_else(|| ("unknown state".to_string(), false))?;
                let got = self.desk.context_state(&ctx).map_err(from_err)?;
                check(got == want, || format!("{ctx} is {}, expected {}", got.as_str(), want.as_str()))?;
            }
            "merged-into" => {
                let (src, dst) = (self.resolve(need("src")?)?, self.resolve(need("dst")?)?);
                let edge = self.desk.graph().find_edge(&src, EdgeLabel::MergedInto, &dst).is_some();
                check(edge, || format!("{src} was not merged into {dst}"))?;
            }
            "member" => {
                let ctx = self.resolve(need("ctx")?)?;
                let present = s.get("present").and_then(Value::as_bool).unwrap_or(true);
                for item in self.items(s)? {
                    let got = self.desk.membership(&item, &ctx).is_some();
                    check(got == present, || format!("{item} membership in {ctx}: {got}, expected {present}"))?;
                }
            }
            "exists" => {
                let present = s.get("present").and_then(Value::as_bool).unwrap_or(true);
                let ids = match self.items(s) {
                    Ok(ids) => ids,
                    Err((_, true)) if !present => Vec::new(),
                    Err(e) => return Err(e),
                };
                for item in ids {
                    let got = self.desk.graph().contains_node(&item);
                    check(got == present, || format!("{item} exists: {got}, expected {present}"))?;
                }
            }
            "current" => {
                let ctx = self.resolve(need("ctx")?)?;
                check(self.desk.current_id() == Some(&ctx), || format!("{ctx} is not current"))?;
            }
            "members" => {
                let ctx = self.resolve(need("ctx")?)?;
                let want = s.get("count").and_then(Value::as_u64).ok_or_else(|| ("missing `count`".to_string(), false))? as usize;
                let got = self.desk.member_count(&ctx);
                check(got == want, || format!("{ctx} has {got} members, expected {want}"))?;
            }
            "report" => {
                let Some(r) = self.outcome.reports.last() else { return Err(("no tidyup has run".into(), true)) };
                let want = s.get("count").and_then(Value::as_u64).ok_or_else(|| ("missing `count`".to_string(), false))? as usize;
                let got = match (str_of("reorg"), measure_of("measure")?) {
                    (Some("merge"), _) => r.actions.iter().filter(|a| a.kind == ActionKind::Merge).count(),
                    (Some("condense"), _) => r.actions.iter().filter(|a| a.kind == ActionKind::Condense).count(),
                    (_, Some(m)) => r.count(m),
                    _ => return fail("report assert needs `reorg` (merge|condense) or `measure`"),
                };
                check(got == want, || format!("report has {got}, expected {want}"))?;
            }
            other => return fail(format!("unknown assert kind {other:?}")),
        }
        Ok(())
    }
}

/// Runs `text` against `desk`; file references resolve against `base_dir`.
pub fn run_scenario(desk: &mut Desk, text: &str, base_dir: &Path) -> std::result::Result<ScenarioOutcome, ScenarioError> {
    Scenario::new(desk, base_dir).run_text(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::desk::DeskConfig;

    fn run(text: &str) -> std::result::Result<ScenarioOutcome, ScenarioError> {
        let mut d = Desk::in_memory(DeskConfig::default()).unwrap();
        run_scenario(&mut d, text, Path::new("."))
    }

    #[test]
    fn refs_relative_time_and_asserts() {
        let script = r#"
# comment
{"at": "2024-01-01T00:00:00Z", "action": "create-context", "name": "XY", "as": "xy"}
{"at": "+0d", "action": "add-item", "ctx": "@xy", "name": "t.pdf", "strength": 0.3, "as": "t"}
{"at": "+30d", "action": "assert", "kind": "mb", "ctx": "@xy", "item": "@t", "approx": 0.15}
{"at": "+200d", "action": "tidyup"}
{"at": "+200d", "action": "assert", "kind": "measure", "ctx": "XY", "item_name": "t.pdf", "is": "ARCHIVE"}
{"at": "+200d", "action": "assert", "kind": "report", "measure": "ARCHIVE", "count": 1}
{"at": "+200d", "action": "assert", "kind": "report", "reorg": "merge", "count": 0}
"#;
        let out = run(script).unwrap();
        assert_eq!((out.steps, out.asserts), (7, 4));
    }

    #[test]
    fn failing_assert_reports_line() {
        let script = "{\"at\": \"2024-01-01T00:00:00Z\", \"action\": \"create-context\", \"name\": \"A\"}\n{\"action\": \"assert\", \"kind\": \"members\", \"ctx\": \"A\", \"count\": 2}\n";
        let e = run(script).unwrap_err();
        assert_eq!((e.line, e.assertion), (2, true));
    }

    #[test]
    fn time_must_not_decrease() {
        let script = "{\"at\": \"2024-02-01T00:00:00Z\", \"action\": \"create-context\", \"name\": \"A\"}\n{\"at\": \"2024-01-01T00:00:00Z\", \"action\": \"create-context\", \"name\": \"B\"}\n";
        let e = run(script).unwrap_err();
        assert!(!e.assertion && e.message.contains("decrease"));
        assert!(run("{\"at\": \"+1d\", \"action\": \"create-context\", \"name\": \"A\"}").is_err());
        assert!(run("{\"at\": \"2024-01-01T00:00:00Z\", \"action\": \"fly\"}").is_err());
    }
}
