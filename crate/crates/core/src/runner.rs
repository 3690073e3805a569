//! Open-loop playback of an episode under a policy.
//!
//! Recorded frames advance with the playback clock no matter what the agent
//! does; the agent's own pose is dead-reckoned from its actions and compared
//! with the ground truth afterwards.

use serde::{Deserialize, Serialize};

use crate::decompose::ValidationReport;
use crate::episode::{Action, Episode, FrameReader};
use crate::kinematics::{step_pose, KinematicsConfig, Pose, Trajectory};
use crate::policy::{DecisionRecord, DecisionSource, Observation, Policy, PolicyDecision};
use crate::subtask::{apply_transition, focus_subtask, StateTransition, SubtaskList, SubtaskState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Stopped,
    Timeout,
    Aborted,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Stopped => "stopped",
            Termination::Timeout => "timeout",
            Termination::Aborted => "aborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub time: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRun {
    pub episode_id: String,
    pub policy: String,
    /// The list the agent started with; absent when the policy failed to start.
    pub initial_subtasks: Option<SubtaskList>,
    pub final_subtasks: Option<SubtaskList>,
    pub records: Vec<DecisionRecord>,
    pub trajectory: Trajectory,
    pub termination: Termination,
    /// The policy stopped while some subtask was still unfinished.
    pub early_stop: bool,
    pub violations: Vec<Violation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub validation_reports: Vec<ValidationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EpisodeRun {
    pub fn final_pose(&self) -> Pose {
        self.trajectory.final_pose()
    }

    /// Number of decisions the policy itself produced.
    pub fn policy_decisions(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.source == DecisionSource::Policy)
            .count()
    }

    fn aborted(episode: &Episode, policy: &dyn Policy, error: String) -> Self {
        Self {
            episode_id: episode.id.clone(),
            policy: policy.name().to_string(),
            initial_subtasks: None,
            final_subtasks: None,
            records: Vec::new(),
            trajectory: Trajectory::new(),
            termination: Termination::Aborted,
            early_stop: false,
            violations: Vec::new(),
            validation_reports: Vec::new(),
            error: Some(error),
        }
    }
}

/// Plays `episode` back under `policy`.
///
/// At each tick `t = k * decision_period` the runner starts the focus subtask
/// if it is still pending, emits STOP itself when every subtask is done, and
/// otherwise asks the agent for a decision and applies it. The run ends on
/// STOP, on policy failure (aborted) or after `ceil(T / period)` decisions with
/// `T = max_step_factor * duration` (timeout).
pub fn run_episode(episode: &Episode, policy: &dyn Policy, config: &KinematicsConfig) -> EpisodeRun {
    let mut agent = match policy.begin(episode) {
        Ok(agent) => agent,
        Err(e) => return EpisodeRun::aborted(episode, policy, e.to_string()),
    };
    let frames = if policy.wants_frames() {
        match FrameReader::open(&episode.frame_source) {
            Ok(reader) => reader,
            Err(e) => return EpisodeRun::aborted(episode, policy, e.to_string()),
        }
    } else {
        None
    };

    let initial = agent.initial_subtasks().clone();
    let mut list = initial.clone();
    let mut pose = Pose::ORIGIN;
    let mut trajectory = Trajectory::new();
    let mut records: Vec<DecisionRecord> = Vec::new();
    let mut violations = Vec::new();
    let mut termination = Termination::Timeout;
    let mut early_stop = false;
    let mut error = None;
    let period = config.decision_period;

    for step in 0..config.max_decisions(episode.duration()) {
        let time = step as f64 * period;

        let mut auto_started = None;
        if let Some(id) = focus_subtask(&list) {
            if list.get(id).map(|s| s.state) == Some(SubtaskState::Pending) {
                list = apply_transition(&list, StateTransition::Start(id))
                    .expect("starting the focus subtask is always legal");
                auto_started = Some(id);
            }
        }

        let Some(focus) = focus_subtask(&list) else {
            records.push(DecisionRecord {
                time,
                focus_id: None,
                decision: PolicyDecision::new(Action::Stop, StateTransition::None, "all subtasks done"),
                agent_pose_after: pose,
                transition_accepted: false,
                source: DecisionSource::Runner,
                auto_started,
                states_after: list.states(),
            });
            termination = Termination::Stopped;
            break;
        };

        let frame = match frames.as_ref().map(|f| f.frame_at(time)).transpose() {
            Ok(frame) => frame.flatten(),
            Err(e) => {
                error = Some(e.to_string());
                termination = Termination::Aborted;
                break;
            }
        };
        let observation = Observation {
            time,
            step,
            subtasks: &list,
            focus: Some(focus),
            frame: frame.as_ref(),
            history: &records,
        };
        let decision = match agent.decide(&observation) {
            Ok(d) => d,
            Err(e) => {
                let message = e.to_string();
                violations.push(Violation { time, message: message.clone() });
                error = Some(message);
                termination = Termination::Aborted;
                break;
            }
        };
        if let Some(v) = &decision.violation {
            violations.push(Violation { time, message: v.clone() });
        }

        let mut transition_accepted = false;
        let mut decision = decision;
        if !decision.transition.is_none() {
            match apply_transition(&list, decision.transition) {
                Ok(next) => {
                    list = next;
                    transition_accepted = true;
                }
                Err(e) => {
                    // Agents that bypass the legality filter still cannot corrupt the list.
                    violations.push(Violation { time, message: e.to_string() });
                    decision.violation.get_or_insert_with(|| e.to_string());
                    decision.transition = StateTransition::None;
                }
            }
        }

        let action = decision.action;
        if action != Action::Stop {
            pose = step_pose(pose, action, period, config);
            trajectory.push(time + period, pose);
        }
        records.push(DecisionRecord {
            time,
            focus_id: Some(focus),
            decision,
            agent_pose_after: pose,
            transition_accepted,
            source: DecisionSource::Policy,
            auto_started,
            states_after: list.states(),
        });
        if action == Action::Stop {
            termination = Termination::Stopped;
            early_stop = !list.all_done();
            break;
        }
    }

    EpisodeRun {
        episode_id: episode.id.clone(),
        policy: policy.name().to_string(),
        initial_subtasks: Some(initial),
        final_subtasks: Some(list),
        records,
        trajectory,
        termination,
        early_stop,
        violations,
        validation_reports: agent.validation_reports().to_vec(),
        error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::{ActionInterval, EpisodeAnnotation, FrameSourceRef, InstructionText, SceneClass, SubtaskBoundary};
    use crate::kinematics::goal_pose;
    use crate::policy::{scripted_oracle_policy, EpisodeAgent, PolicyError};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn episode() -> Episode {
        let annotation = EpisodeAnnotation::new(vec![
            ActionInterval { action: Action::Forward, t_start: 0.0, t_end: 4.0 },
            ActionInterval { action: Action::LeftRotate, t_start: 4.0, t_end: 7.0 },
            ActionInterval { action: Action::Forward, t_start: 7.0, t_end: 11.0 },
            ActionInterval { action: Action::Stop, t_start: 11.0, t_end: 12.0 },
        ])
        .unwrap();
        Episode::new(
            "ep-1",
            SceneClass::Farm,
            InstructionText::new("walk ahead, turn left and walk on").unwrap(),
            annotation,
            FrameSourceRef::null(),
            Some(vec![
                SubtaskBoundary { ordinal: 1, time: 4.0 },
                SubtaskBoundary { ordinal: 2, time: 11.0 },
            ]),
        )
        .unwrap()
    }

    struct Fixed {
        action: Action,
        calls: AtomicUsize,
    }

    struct FixedAgent<'a> {
        owner: &'a Fixed,
        list: SubtaskList,
    }

    impl EpisodeAgent for FixedAgent<'_> {
        fn initial_subtasks(&self) -> &SubtaskList {
            &self.list
        }
        fn decide(&mut self, _obs: &Observation<'_>) -> Result<PolicyDecision, PolicyError> {
            self.owner.calls.fetch_add(1, Ordering::SeqCst);
            Ok(PolicyDecision::new(self.owner.action, StateTransition::None, ""))
        }
    }

    impl Policy for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn begin<'a>(&'a self, episode: &'a Episode) -> Result<Box<dyn EpisodeAgent + 'a>, PolicyError> {
            Ok(Box::new(FixedAgent { owner: self, list: SubtaskList::single(episode.instruction.text()) }))
        }
    }

    #[test]
    fn oracle_reaches_goal() {
        let ep = episode();
        let cfg = KinematicsConfig::default();
        let run = run_episode(&ep, &scripted_oracle_policy(), &cfg);
        assert_eq!(run.termination, Termination::Stopped);
        assert!(!run.early_stop);
        assert!(run.final_pose().distance_to(&goal_pose(&ep.annotation, &cfg)) < 1e-6);
        assert!(run.final_subtasks.as_ref().unwrap().all_done());
        assert!(run.violations.is_empty());
    }

    #[test]
    fn immediate_stop_keeps_origin() {
        let policy = Fixed { action: Action::Stop, calls: AtomicUsize::new(0) };
        let run = run_episode(&episode(), &policy, &KinematicsConfig::default());
        assert_eq!(run.trajectory.len(), 1);
        assert_eq!(run.final_pose(), Pose::ORIGIN);
        assert_eq!(run.termination, Termination::Stopped);
        assert!(run.early_stop);
    }

    #[test]
    fn never_stopping_times_out_with_exact_budget() {
        let policy = Fixed { action: Action::LeftRotate, calls: AtomicUsize::new(0) };
        let cfg = KinematicsConfig::default();
        let run = run_episode(&episode(), &policy, &cfg);
        assert_eq!(run.termination, Termination::Timeout);
        assert_eq!(run.records.len(), 24);
        assert_eq!(policy.calls.load(Ordering::SeqCst), 24);
        assert!(run.records.windows(2).all(|w| w[1].time > w[0].time));
    }

    #[test]
    fn runner_stops_without_querying_when_all_done() {
        // Oracle finishes both subtasks; the runner then stops on its own only if the
        // policy has not already stopped. Force that case with a trailing non-STOP interval.
        let annotation = EpisodeAnnotation::new(vec![
            ActionInterval { action: Action::Forward, t_start: 0.0, t_end: 2.0 },
            ActionInterval { action: Action::RightRotate, t_start: 2.0, t_end: 5.0 },
        ])
        .unwrap();
        let ep = Episode::new(
            "ep-2",
            SceneClass::Forest,
            InstructionText::new("walk then turn right").unwrap(),
            annotation,
            FrameSourceRef::null(),
            Some(vec![SubtaskBoundary { ordinal: 1, time: 2.0 }, SubtaskBoundary { ordinal: 2, time: 4.0 }]),
        )
        .unwrap();
        let run = run_episode(&ep, &scripted_oracle_policy(), &KinematicsConfig::default());
        let last = run.records.last().unwrap();
        assert_eq!(last.source, DecisionSource::Runner);
        assert_eq!(last.decision.action, Action::Stop);
        assert_eq!(last.time, 5.0);
        assert_eq!(run.termination, Termination::Stopped);
    }
}
