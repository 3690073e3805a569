//! The decision loop under a backend that mostly replies with junk.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vln_core::kinematics::KinematicsConfig;
use vln_core::model::{CannedBackend, ModelClient};
use vln_core::policy::{
    filter_transition, parse_decision_reply, DecisionSource, Policy, VlmPolicy,
};
use vln_core::runner::{run_episode, Termination};
use vln_core::subtask::{is_valid_state_pattern, StateTransition, Subtask, SubtaskList};
use vln_core::synth::{generate, GeneratorSpec};

const DECOMPOSITION: &str = r#"[
  {"id": 1, "description": "walk forward to the marker", "start_condition": "at the start", "end_condition": "at the marker"},
  {"id": 2, "description": "turn and walk to the gate", "start_condition": "at the marker", "end_condition": "at the gate"}
]"#;

fn junk(rng: &mut ChaCha8Rng) -> String {
    let actions = ["FORWARD", "left rotate", "RIGHT_ROTATE", "STOP", "JUMP", "", "forward!!"];
    let changes = [
        "none",
        "subtask 1: pending to doing",
        "subtask 1: doing to done",
        "subtask 2: doing to done",
        "subtask 2: pending to done",
        "subtask 9: pending to doing",
        "subtask 0: doing to done",
        "subtask 1: done to pending",
        "Subtask NO.2 changes from pending to doing",
        "finish everything",
        "subtask -1: doing to done",
    ];
    match rng.gen_range(0..10) {
        0 => "not json at all".to_string(),
        1 => "{\"action\": ".to_string(),
        2 => "[1, 2, 3]".to_string(),
        3 => format!("{{\"action\": {}, \"state_change\": 5}}", rng.gen_range(0..9)),
        _ => format!(
            "```json\n{{\"action\": \"{}\", \"state_change\": \"{}\", \"reason\": \"r\"}}\n```",
            actions[rng.gen_range(0..actions.len())],
            changes[rng.gen_range(0..changes.len())]
        ),
    }
}

fn script(seed: u64, n: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| junk(&mut rng)).collect()
}

#[test]
fn junk_replies_never_corrupt_the_list() {
    let list = SubtaskList::all_pending(vec![
        Subtask::pending(1, "a", "s", "e"),
        Subtask::pending(2, "b", "s", "e"),
        Subtask::pending(3, "c", "s", "e"),
    ])
    .unwrap();
    for reply in script(11, 1000) {
        if let Ok(parsed) = parse_decision_reply(&reply) {
            let decision = filter_transition(&list, parsed);
            if decision.violation.is_some() {
                assert_eq!(decision.transition, StateTransition::None);
            }
        }
    }
}

#[test]
fn episodes_finish_under_adversarial_backend() {
    let episodes = generate(&GeneratorSpec { seed: 4, n_episodes: 12, ..GeneratorSpec::default() }).unwrap();
    let config = KinematicsConfig::default();
    let mut total_violations = 0;
    let mut coerced = 0;
    for use_list in [false, true] {
        let mut replies = script(if use_list { 2 } else { 1 }, 1000);
        if use_list {
            replies.insert(0, DECOMPOSITION.to_string());
        }
        let backend = Arc::new(CannedBackend::new(replies));
        let policy = VlmPolicy::new(backend.clone() as Arc<dyn ModelClient>, use_list);
        for episode in &episodes {
            let run = run_episode(episode, &policy as &dyn Policy, &config);
            assert!(matches!(
                run.termination,
                Termination::Stopped | Termination::Timeout | Termination::Aborted
            ));
            if run.termination == Termination::Aborted {
                assert!(run.error.is_some());
            }
            let mut logged = 0;
            for record in &run.records {
                assert!(is_valid_state_pattern(&record.states_after));
                if record.decision.violation.is_some() {
                    logged += 1;
                    assert_eq!(record.decision.transition, StateTransition::None);
                    assert!(!record.transition_accepted);
                }
                if record.source == DecisionSource::Policy && !record.decision.transition.is_none() {
                    assert!(record.transition_accepted);
                }
            }
            assert!(run.violations.len() >= logged);
            total_violations += run.violations.len();
            coerced += logged;
        }
        assert!(backend.call_count() > 0);
    }
    assert!(total_violations > 0);
    assert!(coerced > 0);
}
