//! HTTP gateway: snapshot, event stream, task start and interventions.
//!
//! Handlers only touch the orchestrator's public entry points, which take
//! the world lock briefly; nothing here reaches into agent internals.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use serde_json::json;
use stepwise_core::orchestrator::TaskRequest;
use stepwise_core::{InterventionCommand, Orchestrator};

/// How often the event stream polls the log for new entries.
pub const STREAM_POLL: Duration = Duration::from_millis(25);

pub fn router(orchestrator: Arc<Orchestrator>) -> Router {
    Router::new()
        .route("/api/snapshot", get(snapshot))
        .route("/api/events", get(events))
        .route("/api/tasks", post(start_task))
        .route("/api/intervene", post(intervene))
        .route("/api/agents/{id}", get(agent))
        .with_state(orchestrator)
}

fn json_body(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn unprocessable(reason: String) -> Response {
    (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "error": reason }))).into_response()
}

async fn snapshot(State(o): State<Arc<Orchestrator>>) -> Response {
    json_body(o.snapshot_json())
}

async fn agent(State(o): State<Arc<Orchestrator>>, Path(id): Path<String>) -> Response {
    match o.agent_json(&id) {
        Some(body) => json_body(body),
        None => (StatusCode::NOT_FOUND, Json(json!({ "error": format!("unknown agent `{id}`") }))).into_response(),
    }
}

async fn start_task(State(o): State<Arc<Orchestrator>>, Json(req): Json<TaskRequest>) -> Response {
    match o.start_task(&req.instruction, &req.manager, &req.members) {
        Ok(task_id) => Json(json!({ "task_id": task_id })).into_response(),
        Err(err) => unprocessable(err.to_string()),
    }
}

async fn intervene(State(o): State<Arc<Orchestrator>>, Json(command): Json<InterventionCommand>) -> Response {
    match o.intervene(command) {
        Ok(report) => Json(report).into_response(),
        Err(err) => unprocessable(err.to_string()),
    }
}

#[derive(Debug, Default, Deserialize)]
struct EventsQuery {
    /// Only entries with a larger sequence number are streamed.
    after: Option<u64>,
}

/// Server-sent events, one per log entry, with the sequence number as the
/// event id so a reconnecting client resumes where it left off.
async fn events(
    State(o): State<Arc<Orchestrator>>,
    Query(query): Query<EventsQuery>,
    headers: HeaderMap,
) -> Sse<impl Stream<Item = Result<SseEvent, Infallible>>> {
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse().ok());
    let after = query.after.or(resume).unwrap_or(0);
    let stream = futures::stream::unfold((o, after), |(o, mut after)| async move {
        loop {
            let fresh = o.events_since(after);
            if !fresh.is_empty() {
                after = fresh.last().map_or(after, |e| e.seq);
                let items: Vec<Result<SseEvent, Infallible>> = fresh
                    .iter()
                    .map(|e| {
                        Ok(SseEvent::default()
                            .id(e.seq.to_string())
                            .event(e.kind.type_name())
                            .data(serde_json::to_string(e).expect("event serializes")))
                    })
                    .collect();
                return Some((futures::stream::iter(items), (o, after)));
            }
            tokio::time::sleep(STREAM_POLL).await;
        }
    });
    Sse::new(futures::StreamExt::flatten(stream)).keep_alive(KeepAlive::default())
}

/// Serves the gateway on `listener` until `shutdown` resolves.
pub async fn serve(
    orchestrator: Arc<Orchestrator>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(orchestrator))
        .with_graceful_shutdown(shutdown)
        .await
}
