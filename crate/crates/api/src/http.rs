//! HTTP/JSON routes and server-sent event streams.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, put};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};

use fogchain_core::feed::{EventFeed, FeedEntry};
use fogchain_core::ids::{DeviceId, Millis, PolicyId};
use fogchain_core::ledger::TxId;

use crate::service::{ApiError, ApiService};

/// How often an idle event stream re-checks the feed.
pub const DEFAULT_STREAM_POLL: Duration = Duration::from_millis(25);

#[derive(Clone)]
struct AppState {
    service: Arc<ApiService>,
    stream_poll: Duration,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

fn ok<T: Serialize>(status: StatusCode, body: Result<T, ApiError>) -> Response {
    match body {
        Ok(b) => (status, Json(b)).into_response(),
        Err(e) => e.into_response(),
    }
}

fn policy_id(raw: &str) -> Result<PolicyId, ApiError> {
    raw.parse().map(PolicyId).map_err(|_| ApiError::bad_request(format!("invalid policy id {raw:?}")))
}

pub fn router(service: Arc<ApiService>) -> Router {
    router_with(service, DEFAULT_STREAM_POLL)
}

pub fn router_with(service: Arc<ApiService>, stream_poll: Duration) -> Router {
    Router::new()
        .route("/devices", get(list_devices).post(add_device))
        .route("/devices/{id}", get(get_device).put(update_device).delete(delete_device))
        .route("/devices/{id}/policies", get(get_policies).post(add_policy))
        .route("/devices/{id}/policies/{pid}", put(update_policy).delete(delete_policy))
        .route("/devices/{id}/hashes", get(get_hashes))
        .route("/devices/{id}/history", get(history))
        .route("/devices/{id}/events/stream", get(device_stream))
        .route("/events/stream", get(global_stream))
        .route("/tx/{id}", get(tx_status))
        .route("/metrics", get(metrics))
        .with_state(AppState { service, stream_poll })
}

async fn add_device(State(s): State<AppState>, body: Bytes) -> Response {
    ok(StatusCode::ACCEPTED, s.service.add_device(&body))
}

async fn update_device(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> Response {
    ok(StatusCode::ACCEPTED, s.service.update_device(&DeviceId::new(id), &body))
}

async fn delete_device(State(s): State<AppState>, Path(id): Path<String>) -> Response {
    ok(StatusCode::ACCEPTED, s.service.delete_device(&DeviceId::new(id)))
}

async fn add_policy(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> Response {
    ok(StatusCode::ACCEPTED, s.service.add_policy(&DeviceId::new(id), &body))
}

async fn update_policy(State(s): State<AppState>, Path((id, pid)): Path<(String, String)>, body: Bytes) -> Response {
    let r = policy_id(&pid).and_then(|pid| s.service.update_policy(&DeviceId::new(id), pid, &body));
    ok(StatusCode::ACCEPTED, r)
}

async fn delete_policy(State(s): State<AppState>, Path((id, pid)): Path<(String, String)>) -> Response {
    let r = policy_id(&pid).and_then(|pid| s.service.delete_policy(&DeviceId::new(id), pid));
    ok(StatusCode::ACCEPTED, r)
}

async fn tx_status(State(s): State<AppState>, Path(id): Path<String>) -> Response {
    let r = id
        .parse()
        .map(TxId)
        .map_err(|_| ApiError::bad_request(format!("invalid transaction id {id:?}")))
        .and_then(|id| s.service.tx(id));
    ok(StatusCode::OK, r)
}

async fn list_devices(State(s): State<AppState>) -> Response {
    ok(StatusCode::OK, s.service.list_devices())
}

async fn get_device(State(s): State<AppState>, Path(id): Path<String>) -> Response {
    ok(StatusCode::OK, s.service.get_device(&DeviceId::new(id)))
}

async fn get_policies(State(s): State<AppState>, Path(id): Path<String>) -> Response {
    ok(StatusCode::OK, s.service.get_policies(&DeviceId::new(id)))
}

async fn get_hashes(State(s): State<AppState>, Path(id): Path<String>) -> Response {
    ok(StatusCode::OK, s.service.get_hashes(&DeviceId::new(id)))
}

#[derive(Debug, Deserialize)]
struct RangeQuery {
    from: Option<Millis>,
    to: Option<Millis>,
}

async fn history(State(s): State<AppState>, Path(id): Path<String>, Query(q): Query<RangeQuery>) -> Response {
    ok(StatusCode::OK, s.service.history(&DeviceId::new(id), q.from, q.to))
}

async fn metrics(State(s): State<AppState>) -> Response {
    (StatusCode::OK, Json(s.service.metrics())).into_response()
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    since: Option<u64>,
}

/// `?since=` wins over `Last-Event-ID`; with neither, only new entries
/// are delivered.
fn start_cursor(feed: &EventFeed, q: &StreamQuery, headers: &HeaderMap) -> u64 {
    if let Some(since) = q.since {
        return since;
    }
    let last = headers.get("last-event-id").and_then(|v| v.to_str().ok()).and_then(|v| v.trim().parse::<u64>().ok());
    match last {
        Some(id) => id + 1,
        None => feed.next_seq(),
    }
}

fn feed_stream(
    feed: Arc<EventFeed>,
    cursor: u64,
    device: Option<DeviceId>,
    poll: Duration,
) -> impl Stream<Item = Result<Event, Infallible>> {
    stream::unfold((cursor, VecDeque::<FeedEntry>::new()), move |(mut cursor, mut buffer)| {
        let feed = feed.clone();
        let device = device.clone();
        async move {
            loop {
                if let Some(entry) = buffer.pop_front() {
                    let event = Event::default()
                        .id(entry.seq.to_string())
                        .event(entry.item.event_name())
                        .json_data(&entry)
                        .expect("feed entries serialize");
                    return Some((Ok(event), (cursor, buffer)));
                }
                let fresh = feed.since(cursor);
                if let Some(last) = fresh.last() {
                    cursor = last.seq + 1;
                }
                buffer.extend(
                    fresh.into_iter().filter(|e| device.as_ref().is_none_or(|d| e.item.device_id() == Some(d))),
                );
                if buffer.is_empty() {
                    tokio::time::sleep(poll).await;
                }
            }
        }
    })
}

async fn global_stream(State(s): State<AppState>, headers: HeaderMap, Query(q): Query<StreamQuery>) -> Response {
    let feed = s.service.shared().feed.clone();
    let cursor = start_cursor(&feed, &q, &headers);
    Sse::new(feed_stream(feed, cursor, None, s.stream_poll)).keep_alive(KeepAlive::default()).into_response()
}

async fn device_stream(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<StreamQuery>,
) -> Response {
    let device = DeviceId::new(id);
    if s.service.shared().ledger.view().state().slot_of(&device).is_none() {
        return ApiError::not_found(format!("unknown device {device}")).into_response();
    }
    let feed = s.service.shared().feed.clone();
    let cursor = start_cursor(&feed, &q, &headers);
    Sse::new(feed_stream(feed, cursor, Some(device), s.stream_poll)).keep_alive(KeepAlive::default()).into_response()
}
