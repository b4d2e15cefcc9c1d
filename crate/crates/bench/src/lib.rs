//! Fixtures shared by the benchmarks.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stepwise_core::messaging::{self, Message};
use stepwise_core::sim::{self, Transition};
use stepwise_core::{state, AgentConfig, Orchestrator, OrchestratorConfig, Scenario};

pub fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"));
    Scenario::load(&path).expect("bundled scenario loads")
}

/// One task with a sender `A0` and `receivers` other members, nothing queued.
pub fn broadcast_world(receivers: usize) -> (Orchestrator, String) {
    let o = Orchestrator::new(OrchestratorConfig::default()).expect("default config");
    let names: Vec<String> = (0..=receivers).map(|i| format!("A{i}")).collect();
    for name in &names {
        o.spawn_agent(AgentConfig {
            name: name.clone(),
            role: "r".into(),
            profile: String::new(),
            skills: vec!["process_message".into(), "send_message".into()],
            tools: vec![],
            llm: "default".into(),
        })
        .expect("spawn");
    }
    let task = state::new_task(&mut o.world(), "bench", &names).expect("task");
    (o, task)
}

/// Enqueues one note to every receiver and dispatches it.
pub fn broadcast_once(o: &Orchestrator, task: &str, receivers: usize) {
    let mut w = o.world();
    let to = (1..=receivers).map(|i| format!("A{i}")).collect();
    let m = Message::note(w.ids.message(), task.to_string(), "A0", to, "all hands");
    messaging::enqueue(&mut w, m).expect("enqueue");
    messaging::dispatch_pending(&mut w, task).expect("dispatch");
}

/// A seeded random walk over the simulated crew; returns accepted transitions.
pub fn random_walk(seed: u64, steps: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let o = sim::orchestrator();
    (0..steps)
        .filter(|_| sim::apply(&o, &Transition::random(&mut rng)))
        .count()
}
