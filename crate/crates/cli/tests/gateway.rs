mod common;

use std::io::{BufRead, BufReader};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};
use stepwise_cli::gateway;
use stepwise_core::{Orchestrator, Scenario};

fn fixture() -> Arc<Orchestrator> {
    let scenario = Scenario::load(&scenario_path("one_way_notes")).unwrap();
    let mut bare = scenario.clone();
    bare.tasks.clear();
    bare.interventions.clear();
    Arc::new(bare.build(None).unwrap())
}

fn client() -> Client {
    Client::builder().timeout(Duration::from_secs(5)).build().unwrap()
}

/// Reads `data:` lines from an SSE response until `stop` says so or the
/// deadline passes.
fn read_stream(response: reqwest::blocking::Response, deadline: Duration, mut stop: impl FnMut(&Value) -> bool) -> Vec<Value> {
    let start = Instant::now();
    let mut seen = Vec::new();
    let reader = BufReader::new(response);
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if let Some(data) = line.strip_prefix("data:") {
            let event: Value = serde_json::from_str(data.trim()).unwrap();
            let done = stop(&event);
            seen.push(event);
            if done {
                break;
            }
        }
        if start.elapsed() > deadline {
            break;
        }
    }
    seen
}

#[test]
fn fresh_snapshot_is_byte_identical_and_empty() {
    let o = fixture();
    let server = TestServer::start(gateway::router(o.clone()));
    let response = client().get(server.url("/api/snapshot")).send().unwrap();
    assert_eq!(response.status(), StatusCode::OK);
    assert_eq!(response.headers()["content-type"], "application/json");
    let body = response.text().unwrap();
    assert_eq!(body, o.snapshot_json());
    let doc: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(doc["tasks"], json!({}));
}

#[test]
fn snapshot_matches_mid_run() {
    let o = fixture();
    o.start_task("Write and file a short note.", "M", &["A1".into(), "A2".into()])
        .unwrap();
    o.run(4);
    let server = TestServer::start(gateway::router(o.clone()));
    let body = client().get(server.url("/api/snapshot")).send().unwrap().text().unwrap();
    assert_eq!(body, o.snapshot_json());
}

#[test]
fn start_task_and_read_agent() {
    let o = fixture();
    let server = TestServer::start(gateway::router(o.clone()));
    let c = client();
    let r = c
        .post(server.url("/api/tasks"))
        .json(&json!({"instruction": "note", "manager": "M", "members": ["A1"]}))
        .send()
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert_eq!(r.json::<Value>().unwrap()["task_id"], "task-1");

    let r = c
        .post(server.url("/api/tasks"))
        .json(&json!({"instruction": "note", "manager": "A2"}))
        .send()
        .unwrap();
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert!(r.json::<Value>().unwrap()["error"].as_str().unwrap().contains("task_manager"));

    let r = c.get(server.url("/api/agents/M")).send().unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let body = r.text().unwrap();
    assert_eq!(body, o.agent_json("M").unwrap());
    let m: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(m["step_queue"]["todo"].as_array().unwrap().len(), 1);

    let r = c.get(server.url("/api/agents/ghost")).send().unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
}

#[test]
fn invalid_pause_target_is_422() {
    let o = fixture();
    let server = TestServer::start(gateway::router(o));
    let r = client()
        .post(server.url("/api/intervene"))
        .json(&json!({"command": "pause_agent", "agent_id": "ghost"}))
        .send()
        .unwrap();
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert!(r.json::<Value>().unwrap()["error"].as_str().unwrap().contains("ghost"));
}

#[test]
fn unknown_command_is_rejected_before_the_runtime() {
    let o = fixture();
    let before = o.events_since(0).len();
    let server = TestServer::start(gateway::router(o.clone()));
    let r = client()
        .post(server.url("/api/intervene"))
        .json(&json!({"command": "reboot"}))
        .send()
        .unwrap();
    assert!(r.status().is_client_error());
    assert_eq!(o.events_since(0).len(), before);
}

#[test]
fn injection_shows_up_on_the_stream() {
    let o = fixture();
    o.start_task("Write and file a short note.", "M", &["A1".into(), "A2".into()])
        .unwrap();
    // Keep the task open: the manager never gets to organise it.
    o.intervene(stepwise_core::InterventionCommand::PauseAgent { agent_id: "M".into() })
        .unwrap();
    let live = o.start_live();
    let server = TestServer::start(gateway::router(o.clone()));
    let c = client();
    let after = o.events_since(0).last().map_or(0, |e| e.seq);
    let stream = c.get(server.url(&format!("/api/events?after={after}"))).send().unwrap();

    let posted = Instant::now();
    let r = c
        .post(server.url("/api/intervene"))
        .json(&json!({"command": "inject_message", "receivers": ["A2"], "content": "ping"}))
        .send()
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let report: Value = r.json().unwrap();
    assert_eq!(report["outcome"], "applied");
    let message_id = report["detail"]["message_ids"][0].as_str().unwrap().to_string();

    let events = read_stream(stream, Duration::from_secs(3), |e| {
        e["type"] == "message_delivered" && e["message_id"] == message_id.as_str()
    });
    let elapsed = posted.elapsed();
    live.stop();
    assert!(events.iter().any(|e| e["type"] == "intervention" && e["command"] == "inject_message"));
    let delivered = events.last().unwrap();
    assert_eq!(delivered["message_id"], message_id.as_str());
    assert_eq!(delivered["step_executor"], "process_message");
    // One dispatch period plus generous slack for the poll and HTTP hops.
    assert!(elapsed < Duration::from_millis(450), "{elapsed:?}");
}

#[test]
fn stream_replays_every_event_once_in_order() {
    let o = fixture();
    o.start_task("Write and file a short note.", "M", &["A1".into(), "A2".into()])
        .unwrap();
    o.run(60);
    let total = o.events_since(0).len() as u64;
    let server = TestServer::start(gateway::router(o.clone()));
    let stream = client().get(server.url("/api/events")).send().unwrap();
    let events = read_stream(stream, Duration::from_secs(3), |e| e["seq"] == total);
    let seqs: Vec<u64> = events.iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (1..=total).collect::<Vec<_>>());
    let from_log: Vec<Value> = o
        .events_since(0)
        .iter()
        .map(|e| serde_json::to_value(e).unwrap())
        .collect();
    assert_eq!(events, from_log);
}

#[test]
fn stream_resumes_after_last_event_id() {
    let o = fixture();
    o.start_task("note", "M", &[]).unwrap();
    let total = o.events_since(0).len() as u64;
    assert!(total >= 2);
    let server = TestServer::start(gateway::router(o.clone()));
    let stream = client()
        .get(server.url("/api/events"))
        .header("Last-Event-ID", (total - 1).to_string())
        .send()
        .unwrap();
    let events = read_stream(stream, Duration::from_secs(2), |e| e["seq"] == total);
    assert_eq!(events.len(), 1);
    assert_eq!(events[0]["seq"], total);
}
