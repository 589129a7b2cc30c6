//! The sidebar's JSON control plane as a transport-free handler. The HTTP
//! server wraps [`handle_api_request`]; the event stream lives in
//! [`crate::events`].
//!
//! Errors are `{"error": CODE, "message": text}` with the status from
//! [`Error::http_status`].

use std::collections::BTreeMap;

use base64::Engine;
use percent_encoding::percent_decode_str;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::clock::{parse_ts, Timestamp};
use crate::context::{ContextSpace, ContextState, Origin, Side};
use crate::desk::{keys, Desk};
use crate::error::{Error, Result};
use crate::forgetting::{tidy_up, DeskAccess};
use crate::graph::{Attrs, NodeId, NodeKind};
use crate::par::Exec;

#[derive(Clone, Debug, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    fn ok(body: Value) -> ApiResponse {
        ApiResponse { status: 200, body }
    }

    fn created(body: Value) -> ApiResponse {
        ApiResponse { status: 201, body }
    }

    pub fn error(status: u16, code: &str, message: impl Into<String>) -> ApiResponse {
        ApiResponse { status, body: json!({ "error": code, "message": message.into() }) }
    }

    pub fn code(&self) -> Option<&str> {
        self.body.get("error").and_then(Value::as_str)
    }
}

impl From<Error> for ApiResponse {
    fn from(e: Error) -> ApiResponse {
        ApiResponse::error(e.http_status(), e.code(), e.to_string())
    }
}

fn to_json<T: serde::Serialize>(v: T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T> {
    let body = if body.iter().all(u8::is_ascii_whitespace) { b"{}".as_slice() } else { body };
    serde_json::from_slice(body).map_err(|e| Error::InvalidArgument(format!("bad JSON body: {e}")))
}

fn query_params(query: &str) -> BTreeMap<String, String> {
    query
        .split('&')
        .filter(|kv| !kv.is_empty())
        .map(|kv| {
            let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
            let dec = |s: &str| percent_decode_str(&s.replace('+', " ")).decode_utf8_lossy().into_owned();
            (dec(k), dec(v))
        })
        .collect()
}

/// `?now=` overrides the request clock, so a sidebar can preview a tidy-up
/// at a virtual time.
fn effective_now(q: &BTreeMap<String, String>, now: Timestamp) -> Result<Timestamp> {
    match q.get("now") {
        Some(t) => parse_ts(t).map_err(|_| Error::InvalidArgument(format!("bad timestamp {t:?}"))),
        None => Ok(now),
    }
}

fn context_json(desk: &Desk, c: &ContextSpace, now: Timestamp) -> Value {
    let mut v = to_json(c);
    v["buoyancy"] = json!(desk.context_buoyancy(&c.id, now).ok());
    v["current"] = json!(desk.current_id() == Some(&c.id));
    v["member_count"] = json!(desk.member_count(&c.id));
    v
}

fn context_tree(desk: &Desk, now: Timestamp) -> Value {
    fn level(desk: &Desk, ids: Vec<NodeId>, now: Timestamp) -> Vec<Value> {
        let mut nodes: Vec<(String, NodeId)> = ids.into_iter().map(|c| (desk.context_name(&c), c)).collect();
        nodes.sort();
        nodes
            .into_iter()
            .filter_map(|(_, c)| desk.context(&c).ok())
            .map(|c| {
                let mut v = context_json(desk, &c, now);
                v["children"] = Value::Array(level(desk, desk.children_of(&c.id), now));
                v
            })
            .collect()
    }
    let roots = desk.context_ids().into_iter().filter(|c| desk.parent_of(c).is_none()).collect();
    Value::Array(level(desk, roots, now))
}

fn context_detail(desk: &Desk, ctx: &NodeId, now: Timestamp) -> Result<Value> {
    let c = desk.context(ctx)?;
    let mut v = context_json(desk, &c, now);
    v["children"] = to_json(desk.children_of(ctx));
    let members: Vec<Value> = desk
        .members(ctx)
        .into_iter()
        .map(|m| {
            let node = desk.graph().node(&m.item);
            let mut mv = to_json(&m);
            mv["kind"] = json!(node.map(|n| n.kind));
            mv["name"] = json!(node.and_then(|n| n.attrs.str(keys::NAME)));
            mv["mb"] = json!(desk.memory_buoyancy(&m, now).ok());
            mv
        })
        .collect();
    v["members"] = Value::Array(members);
    Ok(v)
}

fn item_json(desk: &Desk, id: &NodeId) -> Value {
    match desk.graph().node(id) {
        Some(n) => json!({ "id": id, "kind": n.kind, "name": n.attrs.str(keys::NAME) }),
        None => json!({ "id": id }),
    }
}

#[derive(Deserialize)]
struct CreateContext {
    name: String,
    #[serde(default)]
    parent: Option<NodeId>,
}

#[derive(Deserialize)]
struct SplitBody {
    name_a: String,
    name_b: String,
    assignment: BTreeMap<NodeId, Side>,
}

#[derive(Deserialize)]
struct Upload {
    name: String,
    #[serde(default)]
    kind: Option<NodeKind>,
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    content_base64: Option<String>,
    #[serde(default)]
    uri: Option<String>,
}

#[derive(Deserialize)]
struct AddItem {
    #[serde(default)]
    item_id: Option<NodeId>,
    #[serde(default)]
    upload: Option<Upload>,
    #[serde(default)]
    strength: Option<f64>,
}

#[derive(Deserialize)]
struct PinBody {
    #[serde(default = "yes")]
    pinned: bool,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
struct StateBody {
    state: String,
}

#[derive(Deserialize, Default)]
struct TidyBody {
    #[serde(default)]
    dry_run: bool,
}

fn add_item(desk: &mut Desk, ctx: &NodeId, body: AddItem, now: Timestamp) -> Result<ApiResponse> {
    let strength = body.strength.unwrap_or(1.0);
    match (body.item_id, body.upload) {
        (Some(item), None) => {
            let m = desk.add_item(ctx, &item, strength, Origin::User, now)?;
            Ok(ApiResponse::ok(to_json(m)))
        }
        (None, Some(u)) => {
            let kind = u.kind.unwrap_or(NodeKind::File);
            let bytes = match (u.content, u.content_base64) {
                (Some(t), None) => Some(t.into_bytes()),
                (None, Some(b)) => Some(
                    base64::engine::general_purpose::STANDARD
                        .decode(b.trim())
                        .map_err(|e| Error::InvalidArgument(format!("bad base64: {e}")))?,
                ),
                (None, None) => None,
                _ => return Err(Error::InvalidArgument("give content or content_base64, not both".into())),
            };
            let mut attrs = Attrs::new().with(keys::NAME, u.name.as_str());
            if let Some(uri) = u.uri {
                attrs.set(keys::URI, uri);
            }
            let id = desk.create_item(kind, attrs, bytes.as_deref(), Some((ctx, strength, Origin::User)), now)?;
            let m = desk.membership(&id, ctx).ok_or_else(|| Error::InvariantViolation("membership missing".into()))?;
            Ok(ApiResponse::created(to_json(m)))
        }
        _ => Err(Error::InvalidArgument("give exactly one of item_id or upload".into())),
    }
}

fn not_found(path: &str) -> ApiResponse {
    ApiResponse::error(404, "NOT_FOUND", format!("no route for {path}"))
}

fn method_not_allowed(method: &str, path: &str) -> ApiResponse {
    ApiResponse::error(405, "METHOD_NOT_ALLOWED", format!("{method} not allowed on {path}"))
}

/// Handles one authenticated `/api` request. `path` may carry a query.
pub fn handle_api_request(access: &impl DeskAccess, method: &str, path: &str, body: &[u8], now: Timestamp) -> ApiResponse {
    let (path, query) = path.split_once('?').unwrap_or((path, ""));
    let q = query_params(query);
    let segs: Vec<String> = path
        .trim_matches('/')
        .split('/')
        .map(|s| percent_decode_str(s).decode_utf8_lossy().into_owned())
        .collect();
    let segs: Vec<&str> = segs.iter().map(String::as_str).collect();
    let method = method.to_ascii_uppercase();
    let result: Result<ApiResponse> = (|| {
        let now = effective_now(&q, now)?;
        let id = |s: &str| NodeId::new(s);
        Ok(match (method.as_str(), segs.as_slice()) {
            ("GET", ["api", "contexts"]) => ApiResponse::ok(access.read(|d| context_tree(d, now))),
            ("POST", ["api", "contexts"]) => {
                let b: CreateContext = parse_body(body)?;
                access.write(|d| {
                    let c = d.create_context(&b.name, b.parent.as_ref(), now)?;
                    let space = d.context(&c)?;
                    Ok::<_, Error>(ApiResponse::created(context_json(d, &space, now)))
                })?
            }
            ("GET", ["api", "contexts", c]) => ApiResponse::ok(access.read(|d| context_detail(d, &id(c), now))?),
            ("POST", ["api", "contexts", c, "current"]) => {
                let (prev, cur) = access.write(|d| d.set_current(&id(c), now))?;
                ApiResponse::ok(json!({ "previous": prev, "current": cur }))
            }
            ("POST", ["api", "contexts", c, "merge-into", dst]) => {
                ApiResponse::ok(to_json(access.write(|d| d.merge_contexts(&id(c), &id(dst), now))?))
            }
            ("POST", ["api", "contexts", c, "split"]) => {
                let b: SplitBody = parse_body(body)?;
                let (a, bb) = access.write(|d| d.split_context(&id(c), &b.name_a, &b.name_b, &b.assignment, now))?;
                ApiResponse::created(json!({ "a": a, "b": bb }))
            }
            ("POST", ["api", "contexts", c, "retract"]) => {
                ApiResponse::ok(to_json(access.write(|d| d.retract_context(&id(c), now))?))
            }
            ("POST", ["api", "contexts", c, "state"]) => {
                let b: StateBody = parse_body(body)?;
                let state = ContextState::parse(&b.state)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown state {:?}", b.state)))?;
                access.write(|d| d.set_context_state(&id(c), state, now))?;
                ApiResponse::ok(access.read(|d| d.context(&id(c)).map(|s| context_json(d, &s, now)))?)
            }
            ("POST", ["api", "contexts", c, "items"]) => {
                let b: AddItem = parse_body(body)?;
                access.write(|d| add_item(d, &id(c), b, now))?
            }
            ("DELETE", ["api", "contexts", c, "items", item]) => {
                let removed = access.write(|d| d.remove_item(&id(c), &id(item), now))?;
                if !removed {
                    return Err(Error::UnknownMembership { item: item.to_string(), ctx: c.to_string() });
                }
                ApiResponse::ok(json!({ "removed": true }))
            }
            ("POST", ["api", "contexts", c, "pin", item]) => {
                let b: PinBody = parse_body(body)?;
                ApiResponse::ok(to_json(access.write(|d| d.set_pinned(&id(c), &id(item), b.pinned, now))?))
            }
            ("GET", ["api", "proposals"]) => ApiResponse::ok(to_json(access.read(|d| d.proposals()))),
            ("POST", ["api", "proposals", p, "accept"]) => {
                ApiResponse::ok(to_json(access.write(|d| d.accept_proposal(p, now))?))
            }
            ("POST", ["api", "proposals", p, "reject"]) => {
                ApiResponse::ok(to_json(access.write(|d| d.reject_proposal(p, now))?))
            }
            ("GET", ["api", "forgetting", "preview"]) => {
                ApiResponse::ok(to_json(access.read(|d| d.preview_tidy_up(now))?))
            }
            ("POST", ["api", "tidyup"]) => {
                let b: TidyBody = parse_body(body)?;
                let report = if b.dry_run {
                    access.read(|d| d.preview_tidy_up(now))?
                } else {
                    tidy_up(access, now, Exec::default(), false)?
                };
                ApiResponse::ok(to_json(report))
            }
            ("GET", ["api", "unfiled"]) => {
                ApiResponse::ok(access.read(|d| Value::Array(d.unfiled().iter().map(|i| item_json(d, i)).collect())))
            }
            (_, ["api", "contexts"] | ["api", "contexts", _] | ["api", "proposals"] | ["api", "tidyup"] | ["api", "unfiled"]) => {
                method_not_allowed(&method, path)
            }
            _ => not_found(path),
        })
    })();
    result.unwrap_or_else(ApiResponse::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::desk::DeskConfig;
    use parking_lot::RwLock;

    fn t0() -> Timestamp {
        parse_ts("2024-01-01T00:00:00Z").unwrap()
    }

    fn call(d: &RwLock<Desk>, method: &str, path: &str, body: Value) -> ApiResponse {
        let bytes = if body.is_null() { Vec::new() } else { body.to_string().into_bytes() };
        handle_api_request(d, method, path, &bytes, t0())
    }

    fn fresh() -> RwLock<Desk> {
        RwLock::new(Desk::in_memory(DeskConfig::default()).unwrap())
    }

    #[test]
    fn fresh_store_lists_no_contexts() {
        let d = fresh();
        let r = call(&d, "GET", "/api/contexts", Value::Null);
        assert_eq!((r.status, r.body), (200, json!([])));
    }

    #[test]
    fn switching_to_hidden_is_conflict() {
        let d = fresh();
        let c = call(&d, "POST", "/api/contexts", json!({ "name": "A" }));
        assert_eq!(c.status, 201);
        let id = c.body["id"].as_str().unwrap().to_string();
        assert_eq!(call(&d, "POST", &format!("/api/contexts/{id}/state"), json!({ "state": "HIDDEN" })).status, 200);
        let r = call(&d, "POST", &format!("/api/contexts/{id}/current"), Value::Null);
        assert_eq!(r.status, 409);
        assert_eq!(r.code(), Some("CTX_NOT_ACTIVE"));
    }

    #[test]
    fn preview_does_not_touch_the_log() {
        let d = fresh();
        let c = call(&d, "POST", "/api/contexts", json!({ "name": "A" }));
        let id = c.body["id"].as_str().unwrap().to_string();
        call(&d, "POST", &format!("/api/contexts/{id}/items"), json!({ "upload": { "name": "n.txt", "content": "x" } }));
        let before = d.read().seq();
        let p1 = call(&d, "GET", "/api/forgetting/preview?now=2025-01-01T00:00:00Z", Value::Null);
        let p2 = call(&d, "GET", "/api/forgetting/preview?now=2025-01-01T00:00:00Z", Value::Null);
        assert_eq!(p1.status, 200);
        assert_eq!(p1.body, p2.body);
        assert!(!p1.body["actions"].as_array().unwrap().is_empty());
        assert_eq!(d.read().seq(), before);
    }

    #[test]
    fn tree_nests_children_and_flags_current() {
        let d = fresh();
        let xy = call(&d, "POST", "/api/contexts", json!({ "name": "XY" })).body["id"].as_str().unwrap().to_string();
        call(&d, "POST", "/api/contexts", json!({ "name": "m1", "parent": xy }));
        call(&d, "POST", &format!("/api/contexts/{xy}/current"), Value::Null);
        let tree = call(&d, "GET", "/api/contexts", Value::Null).body;
        assert_eq!(tree.as_array().unwrap().len(), 1);
        assert_eq!(tree[0]["current"], json!(true));
        assert_eq!(tree[0]["children"][0]["name"], json!("m1"));
    }

    #[test]
    fn error_mapping() {
        let d = fresh();
        let a = call(&d, "POST", "/api/contexts", json!({ "name": "A" })).body["id"].as_str().unwrap().to_string();
        let b = call(&d, "POST", "/api/contexts", json!({ "name": "B" })).body["id"].as_str().unwrap().to_string();
        call(&d, "POST", &format!("/api/contexts/{a}/current"), Value::Null);
        let r = call(&d, "POST", &format!("/api/contexts/{a}/merge-into/{b}"), Value::Null);
        assert_eq!((r.status, r.code()), (409, Some("SRC_IS_CURRENT")));
        let r = call(&d, "POST", &format!("/api/contexts/{b}/split"), json!({ "name_a": "x", "name_b": "y", "assignment": {} }));
        assert_eq!(r.status, 201);
        assert_eq!(call(&d, "POST", "/api/contexts", json!({ "name": "" })).code(), Some("EMPTY_NAME"));
        assert_eq!(call(&d, "POST", "/api/contexts", json!({ "nom": "x" })).code(), Some("INVALID_ARGUMENT"));
        assert_eq!(call(&d, "GET", "/api/contexts/nope", Value::Null).status, 404);
        assert_eq!(call(&d, "GET", "/api/nothing", Value::Null).status, 404);
        assert_eq!(call(&d, "DELETE", "/api/contexts", Value::Null).status, 405);
    }

    #[test]
    fn item_routes() {
        let d = fresh();
        let a = call(&d, "POST", "/api/contexts", json!({ "name": "A" })).body["id"].as_str().unwrap().to_string();
        let b = call(&d, "POST", "/api/contexts", json!({ "name": "B" })).body["id"].as_str().unwrap().to_string();
        let up = call(&d, "POST", &format!("/api/contexts/{a}/items"), json!({ "upload": { "name": "r.pdf", "content_base64": "AAEC" }, "strength": 0.7 }));
        assert_eq!(up.status, 201);
        let item = up.body["item"].as_str().unwrap().to_string();
        assert_eq!(up.body["strength"], json!(0.7));
        assert_eq!(call(&d, "POST", &format!("/api/contexts/{b}/items"), json!({ "item_id": item })).status, 200);
        let pin = call(&d, "POST", &format!("/api/contexts/{a}/pin/{item}"), Value::Null);
        assert_eq!(pin.body["pinned"], json!(true));
        assert_eq!(call(&d, "DELETE", &format!("/api/contexts/{a}/items/{item}"), Value::Null).status, 200);
        assert_eq!(call(&d, "DELETE", &format!("/api/contexts/{a}/items/{item}"), Value::Null).status, 404);
        let detail = call(&d, "GET", &format!("/api/contexts/{b}"), Value::Null).body;
        assert_eq!(detail["members"][0]["name"], json!("r.pdf"));
        assert_eq!(call(&d, "DELETE", &format!("/api/contexts/{b}/items/{item}"), Value::Null).status, 200);
        let unfiled = call(&d, "GET", "/api/unfiled", Value::Null).body;
        assert_eq!(unfiled[0]["id"], json!(item));
    }
}
