mod common;

use common::*;
use serde_json::json;
use stepwise_core::event::{EventKind, Outcome};
use stepwise_core::messaging::MessageKind;
use stepwise_core::state::{self, check_invariants, Lifecycle};
use stepwise_core::sync::{self, QueryTarget, StageOutcome, SyncInstruction};
use stepwise_core::{AgentPatch, Orchestrator};

fn setup() -> (Orchestrator, String) {
    let o = orchestrator(vec![], Some("ok"));
    o.spawn_agent(agent("M", &["task_manager", "agent_manager", "planning"], &[])).unwrap();
    o.spawn_agent(agent("A1", &["planning", "summary"], &[])).unwrap();
    o.spawn_agent(agent("A2", &["planning", "summary"], &[])).unwrap();
    let t = state::new_task(&mut o.world(), "t", &["M".into(), "A1".into(), "A2".into()]).unwrap();
    (o, t)
}

fn completion(stage: &str, agent: &str) -> SyncInstruction {
    SyncInstruction::UpdateStageCompletion {
        stage_id: stage.into(),
        agent_id: agent.into(),
        summary: format!("{agent} done"),
    }
}

#[test]
fn send_message_grows_the_queue_by_one() {
    let (o, t) = setup();
    let mut w = o.world();
    let m = sync::message_to(&w, &t, "A1", vec!["A2".into()], "hello");
    let results = sync::apply(&mut w, vec![SyncInstruction::SendMessage(m)], "A1");
    assert!(results[0].is_applied());
    assert_eq!(w.task(&t).unwrap().comm_queue.len(), 1);
}

#[test]
fn last_report_finishes_the_stage_and_starts_the_next() {
    let (o, t) = setup();
    let mut w = o.world();
    let s = add_stages(
        &mut w,
        &t,
        &[("one", &[("A1", "a"), ("A2", "b")]), ("two", &[("A1", "c"), ("A2", "d")])],
    );
    state::advance_stage(&mut w, &t).unwrap();

    // A1 reports first; the stage must keep running.
    let r = sync::apply(&mut w, vec![completion(&s[0], "A1")], "A1");
    assert!(r[0].is_applied());
    assert_eq!(stage_status(&w, &s[0]), Lifecycle::Running);
    let early = sync::apply(&mut w, vec![SyncInstruction::FinishStage { stage_id: s[0].clone(), outcome: StageOutcome::Finished }], "A1");
    assert!(!early[0].is_applied());

    let r = sync::apply(
        &mut w,
        vec![
            completion(&s[0], "A2"),
            SyncInstruction::FinishStage {
                stage_id: s[0].clone(),
                outcome: StageOutcome::Finished,
            },
        ],
        "A2",
    );
    assert!(r.iter().all(|x| x.is_applied()), "{r:?}");
    assert_eq!(stage_status(&w, &s[0]), Lifecycle::Finished);
    assert_eq!(stage_status(&w, &s[1]), Lifecycle::Running);
    assert_eq!(w.task(&t).unwrap().current_stage_index, Some(1));
    for a in ["A1", "A2"] {
        let todo = &w.agent(a).unwrap().step_queue.todo;
        // The first stage's planning steps were released; the second's queued.
        assert_eq!(todo.len(), 1);
        assert_eq!((todo[0].executor.as_str(), todo[0].stage_id.as_str()), ("planning", s[1].as_str()));
    }
    assert!(check_invariants(&w.registry).is_empty());
}

#[test]
fn worker_add_stage_is_rejected_for_permission() {
    let (o, t) = setup();
    let mut w = o.world();
    let before = w.registry.clone();
    let add = SyncInstruction::AddStage {
        task_id: t.clone(),
        objective: "x".into(),
        agent_allocation: [("A1".to_string(), "g".to_string())].into(),
    };
    let r = sync::apply(&mut w, vec![add.clone()], "A1");
    assert_eq!(r[0].outcome, Outcome::Rejected);
    assert!(r[0].reason.as_deref().unwrap().contains("task_manager"));
    assert_eq!(w.registry, before);
    assert!(sync::apply(&mut w, vec![add], "M")[0].is_applied());
}

#[test]
fn a_rejection_does_not_stop_later_instructions() {
    let (o, t) = setup();
    let mut w = o.world();
    let r = sync::apply(
        &mut w,
        vec![
            SyncInstruction::FinishTask { task_id: t.clone() },
            SyncInstruction::UpdateTask {
                task_id: t.clone(),
                instruction: None,
                shared_info: [("k".to_string(), "v".to_string())].into(),
            },
        ],
        "A1",
    );
    assert_eq!(r.iter().map(|x| x.outcome).collect::<Vec<_>>(), [Outcome::Rejected, Outcome::Rejected]);
    let r = sync::apply(
        &mut w,
        vec![
            SyncInstruction::CreateAgent {
                config: agent("Nope", &[], &[]),
                join_task: None,
            },
            SyncInstruction::NextStage { task_id: t.clone() },
        ],
        "A1",
    );
    assert_eq!(r[0].outcome, Outcome::Rejected);
    assert!(r[1].is_applied(), "{r:?}");
    // No stages left, so the task finished and left the registry.
    assert!(w.registry.tasks.is_empty());
}

#[test]
fn agent_changes_need_the_agent_manager_skill() {
    let (o, t) = setup();
    let mut w = o.world();
    let modify = SyncInstruction::ModifyAgent {
        agent_id: "A2".into(),
        changes: AgentPatch {
            profile: Some("careful".into()),
            ..Default::default()
        },
    };
    assert!(!sync::apply(&mut w, vec![modify.clone()], "A1")[0].is_applied());
    assert!(sync::apply(&mut w, vec![modify], "M")[0].is_applied());
    assert_eq!(w.agent("A2").unwrap().profile, "careful");

    let create = SyncInstruction::CreateAgent {
        config: agent("Helper", &["planning"], &[]),
        join_task: Some(t.clone()),
    };
    assert!(sync::apply(&mut w, vec![create], "M")[0].is_applied());
    assert!(w.task(&t).unwrap().has_member("Helper"));
    assert!(w.agent("Helper").unwrap().task_refs.contains(&t));
}

#[test]
fn the_operator_bypasses_skill_checks() {
    let (o, t) = setup();
    let mut w = o.world();
    let r = sync::apply(&mut w, vec![SyncInstruction::FinishTask { task_id: t.clone() }], OPERATOR);
    assert!(r[0].is_applied());
    assert_eq!(w.outcomes[&t].status, Lifecycle::Finished);
}

#[test]
fn query_info_answers_by_message() {
    let (o, t) = setup();
    let mut w = o.world();
    let q = SyncInstruction::QueryInfo {
        task_id: t.clone(),
        target: QueryTarget::Task,
        id: None,
    };
    assert!(sync::apply(&mut w, vec![q], "A1")[0].is_applied());
    let m = w.task(&t).unwrap().comm_queue.back().unwrap().clone();
    assert_eq!(m.kind, MessageKind::InfoReply);
    assert_eq!(m.receiver_ids, ["A1"]);
    assert_eq!(m.sender_id, "system");
    assert_eq!(m.payload.unwrap()["instruction"], "t");
}

#[test]
fn malformed_and_unknown_payloads_are_rejected() {
    let missing = json!({"kind": "finish_stage", "payload": {}});
    assert!(SyncInstruction::from_value(missing).unwrap_err().contains("stage_id"));
    let unknown = json!({"kind": "launch_rocket", "payload": {}});
    assert!(SyncInstruction::from_value(unknown).is_err());
    let ok = json!({"kind": "next_stage", "payload": {"task_id": "task-1"}});
    assert_eq!(
        SyncInstruction::from_value(ok).unwrap(),
        SyncInstruction::NextStage { task_id: "task-1".into() }
    );
}

#[test]
fn instructions_round_trip_through_json() {
    let i = SyncInstruction::UpdateStageCompletion {
        stage_id: "stage-1".into(),
        agent_id: "A1".into(),
        summary: "s".into(),
    };
    let v = serde_json::to_value(&i).unwrap();
    assert_eq!(v["kind"], "update_stage_completion");
    assert_eq!(SyncInstruction::from_value(v).unwrap(), i);
}

#[test]
fn every_instruction_is_logged_with_origin_kind_and_outcome() {
    let (o, t) = setup();
    let mut w = o.world();
    let start = w.log.events().len();
    sync::apply(
        &mut w,
        vec![
            SyncInstruction::NextStage { task_id: "task-9".into() },
            SyncInstruction::UpdateTask {
                task_id: t.clone(),
                instruction: Some("new".into()),
                shared_info: Default::default(),
            },
        ],
        "M",
    );
    let logged: Vec<(String, String, Outcome)> = w.log.events()[start..]
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Sync { origin, kind, outcome, .. } => Some((origin.clone(), kind.clone(), *outcome)),
            _ => None,
        })
        .collect();
    assert_eq!(
        logged,
        [
            ("M".into(), "next_stage".into(), Outcome::Rejected),
            ("M".into(), "update_task".into(), Outcome::Applied)
        ]
    );
    assert_eq!(w.task(&t).unwrap().instruction, "new");
}

#[test]
fn a_failed_stage_halts_the_task() {
    let (o, t) = setup();
    let mut w = o.world();
    let s = add_stages(&mut w, &t, &[("one", &[("A1", "a")]), ("two", &[("A2", "b")])]);
    state::advance_stage(&mut w, &t).unwrap();
    let r = sync::apply(
        &mut w,
        vec![SyncInstruction::FinishStage {
            stage_id: s[0].clone(),
            outcome: StageOutcome::Failed,
        }],
        "A1",
    );
    assert!(r[0].is_applied());
    assert_eq!(w.task(&t).unwrap().status, Lifecycle::Failed);
    assert_eq!(stage_status(&w, &s[1]), Lifecycle::Init);
    assert!(w.agent("A1").unwrap().step_queue.todo.is_empty());
}

#[test]
fn messages_may_not_be_forged() {
    let (o, t) = setup();
    let mut w = o.world();
    let m = sync::message_to(&w, &t, "A2", vec!["A1".into()], "hi");
    assert!(!sync::apply(&mut w, vec![SyncInstruction::SendMessage(m)], "A1")[0].is_applied());
    let mut m = sync::message_to(&w, &t, "A1", vec!["A2".into()], "hi");
    m.stage_relative = "stage-77".into();
    assert!(!sync::apply(&mut w, vec![SyncInstruction::SendMessage(m)], "A1")[0].is_applied());
}
