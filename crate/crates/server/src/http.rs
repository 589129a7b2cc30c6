use std::convert::Infallible;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{Request, State};
use axum::http::{header, HeaderMap, HeaderName, HeaderValue, Method, StatusCode, Uri};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{any, get};
use axum::Router;
use futures::stream::{self, Stream, StreamExt};

use cspaces_core::api::handle_api_request;
use cspaces_core::events::{ApiEvent, HEARTBEAT_SECS};
use cspaces_core::facade::check_basic;
use cspaces_core::facade::webdav::{webdav_handle, DavRequest};

use crate::AppState;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/dav", any(dav))
        .route("/dav/", any(dav))
        .route("/dav/{*path}", any(dav))
        .route("/api/events", get(events))
        .route("/api/{*path}", any(api))
        .layer(middleware::from_fn_with_state(state.clone(), auth))
        .with_state(state)
}

async fn auth(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let header = req.headers().get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
    if check_basic(header, &state.user, &state.password) {
        return next.run(req).await;
    }
    (
        StatusCode::UNAUTHORIZED,
        [(header::WWW_AUTHENTICATE, "Basic realm=\"cspaces\"")],
        "authentication required\n",
    )
        .into_response()
}

fn header_str(headers: &HeaderMap, name: &str) -> Option<String> {
    headers.get(name).and_then(|v| v.to_str().ok()).map(str::to_string)
}

async fn blocking<R: Send + 'static>(f: impl FnOnce() -> R + Send + 'static) -> Result<R, Response> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response())
}

async fn dav(State(state): State<AppState>, method: Method, uri: Uri, headers: HeaderMap, body: Bytes) -> Response {
    let req = DavRequest {
        method: method.as_str().to_string(),
        path: uri.path().to_string(),
        depth: header_str(&headers, "depth"),
        destination: header_str(&headers, "destination"),
        body: body.to_vec(),
    };
    let resp = match blocking(move || webdav_handle(&*state.desk, &req, state.now())).await {
        Ok(r) => r,
        Err(e) => return e,
    };
    let mut out = Response::new(Body::from(resp.body));
    *out.status_mut() = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    for (k, v) in resp.headers {
        if let (Ok(k), Ok(v)) = (HeaderName::try_from(k), HeaderValue::try_from(v)) {
            out.headers_mut().insert(k, v);
        }
    }
    out
}

async fn api(State(state): State<AppState>, method: Method, uri: Uri, body: Bytes) -> Response {
    let path = uri.path_and_query().map_or_else(|| uri.path().to_string(), |p| p.as_str().to_string());
    let resp = match blocking(move || handle_api_request(&*state.desk, method.as_str(), &path, &body, state.now())).await {
        Ok(r) => r,
        Err(e) => return e,
    };
    let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, "application/json")], resp.body.to_string()).into_response()
}

fn sse_event(e: &ApiEvent) -> Event {
    Event::default()
        .id(e.seq.to_string())
        .event(e.kind.as_str())
        .data(serde_json::to_string(e).unwrap_or_default())
}

async fn events(State(state): State<AppState>, headers: HeaderMap) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let last = header_str(&headers, "last-event-id").and_then(|v| v.trim().parse::<u64>().ok());
    let sub = state.desk.read().hub().subscribe(last);
    let replay = stream::iter(sub.replay);
    let live = stream::unfold(sub.rx, |mut rx| async move { rx.recv().await.map(|e| (e, rx)) });
    let events = replay.chain(live).map(|e| Ok(sse_event(&e)));
    Sse::new(events).keep_alive(KeepAlive::new().interval(Duration::from_secs(HEARTBEAT_SECS)).text("heartbeat"))
}
