//! Per-step decision making and the policies the runner can drive.
//!
//! A [`Policy`] is shared across episodes; [`Policy::begin`] hands out an
//! [`EpisodeAgent`] that holds whatever per-episode state the policy needs.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::{
    decompose, extract_json, DecomposeError, DecomposeOptions, ValidationReport,
};
use crate::episode::{Action, Episode, ImagePayload, TIME_EPSILON};
use crate::kinematics::Pose;
use crate::model::{ModelClient, ModelError, ModelRequest};
use crate::subtask::{
    apply_transition, focus_subtask, StateTransition, Subtask, SubtaskList, SubtaskState,
};
use crate::template::{PromptTemplate, TemplateError};

pub const DEFAULT_HISTORY_LEN: usize = 3;

const SYSTEM_TEXT: &str =
    "You are the decision maker of a quadruped field robot. Answer with one JSON object only.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDecision {
    pub action: Action,
    pub transition: StateTransition,
    pub rationale: String,
    /// Set when the proposed state change was illegal and replaced by `None`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<String>,
}

impl PolicyDecision {
    pub fn new(action: Action, transition: StateTransition, rationale: impl Into<String>) -> Self {
        Self {
            action,
            transition,
            rationale: rationale.into(),
            violation: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSource {
    Policy,
    /// STOP issued by the runner because every subtask is done.
    Runner,
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub time: f64,
    pub focus_id: Option<u32>,
    pub decision: PolicyDecision,
    pub agent_pose_after: Pose,
    pub transition_accepted: bool,
    pub source: DecisionSource,
    /// Subtask auto-started by the runner at this step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_started: Option<u32>,
    pub states_after: Vec<SubtaskState>,
}

/// What the agent sees at one step.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub time: f64,
    pub step: usize,
    pub subtasks: &'a SubtaskList,
    pub focus: Option<u32>,
    pub frame: Option<&'a ImagePayload>,
    pub history: &'a [DecisionRecord],
}

#[derive(Debug, Error)]
pub enum DecideError {
    #[error("no focus subtask: every subtask is done")]
    NoFocus,
    #[error("model backend failed: {0}")]
    Backend(#[from] ModelError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("unparseable decision reply ({reason}); raw reply: {raw}")]
    Unparseable { raw: String, reason: String },
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("decomposition failed: {0}")]
    Decompose(#[from] DecomposeError),
    #[error("decision failed: {0}")]
    Decide(#[from] DecideError),
    #[error("{0}")]
    Other(String),
}

/// Per-episode decision state.
pub trait EpisodeAgent {
    /// The list the episode starts with (all pending).
    fn initial_subtasks(&self) -> &SubtaskList;

    fn decide(&mut self, observation: &Observation<'_>) -> Result<PolicyDecision, PolicyError>;

    /// Decomposition check reports, when the agent decomposed the instruction.
    fn validation_reports(&self) -> &[ValidationReport] {
        &[]
    }
}

pub trait Policy: Send + Sync {
    fn name(&self) -> &str;

    /// Whether camera frames should be loaded and passed in observations.
    fn wants_frames(&self) -> bool {
        false
    }

    fn begin<'a>(&'a self, episode: &'a Episode) -> Result<Box<dyn EpisodeAgent + 'a>, PolicyError>;
}

/// Proposed state change as written in a reply, before legality checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposedChange {
    None,
    Change {
        subtask_id: u32,
        from: SubtaskState,
        to: SubtaskState,
    },
    /// Text that names no recognizable change.
    Unrecognized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReply {
    pub action: Action,
    pub change: ProposedChange,
    pub change_text: String,
    pub rationale: String,
}

fn change_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^\s*subtask\s*(?:no\.?\s*)?#?(\d{1,9})\s*:?\s*(?:changes\s+)?(?:from\s+)?(pending|doing|done)\s*(?:to|->|=>|→)\s*(pending|doing|done)\s*\.?\s*$",
        )
        .unwrap()
    })
}

/// Parses a `state_change` string: `"none"` or `"subtask <i>: <from> to <to>"`.
/// The longer `"Subtask NO.i changes from pending to doing"` form is accepted too.
pub fn parse_state_change(text: &str) -> ProposedChange {
    let trimmed = text.trim();
    let lowered = trimmed.to_ascii_lowercase();
    if lowered.is_empty() || matches!(lowered.as_str(), "none" | "no change" | "null" | "n/a") {
        return ProposedChange::None;
    }
    let Some(caps) = change_re().captures(trimmed) else {
        return ProposedChange::Unrecognized;
    };
    match (
        caps[1].parse::<u32>(),
        SubtaskState::parse(&caps[2]),
        SubtaskState::parse(&caps[3]),
    ) {
        (Ok(subtask_id), Some(from), Some(to)) => ProposedChange::Change {
            subtask_id,
            from,
            to,
        },
        _ => ProposedChange::Unrecognized,
    }
}

/// Parses a decision reply `{"action", "state_change", "reason"}`.
pub fn parse_decision_reply(text: &str) -> Result<ParsedReply, String> {
    let slice = extract_json(text, '{', '}').ok_or("no JSON object in reply")?;
    let value: serde_json::Value =
        serde_json::from_str(slice).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("reply is not a JSON object")?;
    let action_text = obj
        .get("action")
        .and_then(|v| v.as_str())
        .ok_or("missing string field \"action\"")?;
    let action = Action::parse_lenient(action_text)
        .ok_or_else(|| format!("unknown action {action_text:?}"))?;
    let change_text = match obj.get("state_change") {
        None | Some(serde_json::Value::Null) => String::new(),
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    };
    let rationale = match obj.get("reason") {
        Some(serde_json::Value::String(s)) => s.clone(),
        None | Some(serde_json::Value::Null) => String::new(),
        Some(other) => other.to_string(),
    };
    Ok(ParsedReply {
        action,
        change: parse_state_change(&change_text),
        change_text,
        rationale,
    })
}

/// Turns a parsed reply into a decision, replacing illegal state changes
/// with `None` and recording why.
pub fn filter_transition(list: &SubtaskList, reply: ParsedReply) -> PolicyDecision {
    let (transition, violation) = match reply.change {
        ProposedChange::None => (StateTransition::None, None),
        ProposedChange::Unrecognized => (
            StateTransition::None,
            Some(format!("unrecognized state change {:?}", reply.change_text)),
        ),
        ProposedChange::Change {
            subtask_id,
            from,
            to,
        } => match StateTransition::from_states(subtask_id, from, to) {
            Err(e) => (StateTransition::None, Some(e.to_string())),
            Ok(t) => match apply_transition(list, t) {
                Ok(_) => (t, None),
                Err(e) => (StateTransition::None, Some(e.to_string())),
            },
        },
    };
    PolicyDecision {
        action: reply.action,
        transition,
        rationale: reply.rationale,
        violation,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecideOptions {
    /// Number of previous decisions shown to the model; 0 hides history.
    pub history_len: usize,
    pub max_reply_tokens: u32,
    pub temperature: f64,
}

impl Default for DecideOptions {
    fn default() -> Self {
        Self {
            history_len: DEFAULT_HISTORY_LEN,
            max_reply_tokens: 512,
            temperature: 0.0,
        }
    }
}

pub fn action_menu() -> String {
    Action::ALL.map(Action::token).join(", ")
}

pub fn render_subtask_table(list: &SubtaskList) -> String {
    list.subtasks()
        .iter()
        .map(|s: &Subtask| {
            format!(
                "{}. [{}] {} (start: {}; end: {})",
                s.id, s.state, s.description, s.start_condition, s.end_condition
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_history(history: &[DecisionRecord], len: usize) -> String {
    let tail = &history[history.len().saturating_sub(len)..];
    if len == 0 || tail.is_empty() {
        return "(none)".into();
    }
    tail.iter()
        .map(|r| {
            format!(
                "t={:.1}s action={} state_change={} reason={}",
                r.time, r.decision.action, r.decision.transition, r.decision.rationale
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Builds the decision prompt for the current list state.
pub fn render_decision_prompt(
    list: &SubtaskList,
    template: &PromptTemplate,
    history: &[DecisionRecord],
    options: &DecideOptions,
) -> Result<String, DecideError> {
    template.require(&["subtask_table", "focus_id", "action_menu"])?;
    let focus = focus_subtask(list).ok_or(DecideError::NoFocus)?;
    let mut values = BTreeMap::new();
    values.insert("subtask_table", render_subtask_table(list));
    values.insert("focus_id", focus.to_string());
    values.insert("history_tail", render_history(history, options.history_len));
    values.insert("action_menu", action_menu());
    Ok(template.render(&values)?)
}

/// One decision step. Stateless: everything that evolves lives in `list` and `history`.
pub fn decide(
    list: &SubtaskList,
    frame: Option<&ImagePayload>,
    backend: &dyn ModelClient,
    template: &PromptTemplate,
    history: &[DecisionRecord],
    options: &DecideOptions,
) -> Result<PolicyDecision, DecideError> {
    let prompt = render_decision_prompt(list, template, history, options)?;
    let image = frame.filter(|_| backend.supports_vision()).cloned();
    let ask = |text: String| -> Result<String, DecideError> {
        let request = ModelRequest::new(SYSTEM_TEXT, text)?
            .with_image(image.clone())
            .with_max_reply_tokens(options.max_reply_tokens)
            .with_temperature(options.temperature);
        Ok(backend.complete(&request)?.text)
    };
    let first = ask(prompt.clone())?;
    let parsed = match parse_decision_reply(&first) {
        Ok(p) => p,
        Err(reason) => {
            let repair = format!(
                "{prompt}\n\nYour previous reply could not be used ({reason}).\nPrevious reply:\n{first}\n\n\
                 Reply again with exactly one JSON object with keys \"action\", \"state_change\" and \"reason\"."
            );
            let second = ask(repair)?;
            parse_decision_reply(&second)
                .map_err(|reason| DecideError::Unparseable { raw: second, reason })?
        }
    };
    Ok(filter_transition(list, parsed))
}

/// Model-driven policy, with or without instruction decomposition.
pub struct VlmPolicy {
    backend: Arc<dyn ModelClient>,
    decompose_template: PromptTemplate,
    decide_template: PromptTemplate,
    use_subtask_list: bool,
    decompose_options: DecomposeOptions,
    decide_options: DecideOptions,
}

impl VlmPolicy {
    pub fn new(backend: Arc<dyn ModelClient>, use_subtask_list: bool) -> Self {
        Self {
            backend,
            decompose_template: PromptTemplate::default_decompose(),
            decide_template: PromptTemplate::default_decide(),
            use_subtask_list,
            decompose_options: DecomposeOptions::default(),
            decide_options: DecideOptions::default(),
        }
    }

    pub fn with_templates(mut self, decompose: PromptTemplate, decide: PromptTemplate) -> Self {
        self.decompose_template = decompose;
        self.decide_template = decide;
        self
    }

    pub fn with_options(mut self, decompose: DecomposeOptions, decide: DecideOptions) -> Self {
        self.decompose_options = decompose;
        self.decide_options = decide;
        self
    }
}

struct VlmAgent<'a> {
    policy: &'a VlmPolicy,
    initial: SubtaskList,
    reports: Vec<ValidationReport>,
}

impl EpisodeAgent for VlmAgent<'_> {
    fn initial_subtasks(&self) -> &SubtaskList {
        &self.initial
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<PolicyDecision, PolicyError> {
        Ok(decide(
            obs.subtasks,
            obs.frame,
            self.policy.backend.as_ref(),
            &self.policy.decide_template,
            obs.history,
            &self.policy.decide_options,
        )?)
    }

    fn validation_reports(&self) -> &[ValidationReport] {
        &self.reports
    }
}

impl Policy for VlmPolicy {
    fn name(&self) -> &str {
        if self.use_subtask_list {
            "vlm"
        } else {
            "vlm_no_stl"
        }
    }

    fn wants_frames(&self) -> bool {
        self.backend.supports_vision()
    }

    fn begin<'a>(&'a self, episode: &'a Episode) -> Result<Box<dyn EpisodeAgent + 'a>, PolicyError> {
        let (initial, reports) = if self.use_subtask_list {
            let d = decompose(
                &episode.instruction,
                self.backend.as_ref(),
                &self.decompose_template,
                &self.decompose_options,
            )?;
            (d.list, d.reports)
        } else {
            (SubtaskList::single(episode.instruction.text()), Vec::new())
        };
        Ok(Box::new(VlmAgent {
            policy: self,
            initial,
            reports,
        }))
    }
}

/// Uniformly random actions; never proposes state changes.
#[derive(Debug, Clone, Copy)]
pub struct RandomPolicy {
    seed: u64,
}

pub fn random_policy(seed: u64) -> RandomPolicy {
    RandomPolicy { seed }
}

/// FNV-1a, used to give each episode its own random stream.
fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

impl RandomPolicy {
    pub fn rng_for(&self, episode_id: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stable_hash(episode_id));
        rng
    }
}

struct RandomAgent {
    initial: SubtaskList,
    rng: ChaCha8Rng,
}

impl EpisodeAgent for RandomAgent {
    fn initial_subtasks(&self) -> &SubtaskList {
        &self.initial
    }

    fn decide(&mut self, _obs: &Observation<'_>) -> Result<PolicyDecision, PolicyError> {
        let action = Action::ALL[self.rng.gen_range(0..Action::ALL.len())];
        Ok(PolicyDecision::new(action, StateTransition::None, "random"))
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn begin<'a>(&'a self, episode: &'a Episode) -> Result<Box<dyn EpisodeAgent + 'a>, PolicyError> {
        Ok(Box::new(RandomAgent {
            initial: SubtaskList::single(episode.instruction.text()),
            rng: self.rng_for(&episode.id),
        }))
    }
}

/// Replays the annotation: the annotated action at each playback time, a
/// completion at every subtask boundary, STOP once the annotation ends.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedOracle;

pub fn scripted_oracle_policy() -> ScriptedOracle {
    ScriptedOracle
}

/// Oracle state bound to one episode.
pub struct OracleAgent<'a> {
    episode: &'a Episode,
    initial: SubtaskList,
    /// Completion time per subtask id (index 0 is subtask 1).
    boundaries: Vec<f64>,
}

impl<'a> OracleAgent<'a> {
    pub fn new(episode: &'a Episode) -> Self {
        let boundaries: Vec<f64> = match &episode.subtask_boundaries {
            Some(b) if !b.is_empty() => b.iter().map(|b| b.time).collect(),
            _ => vec![episode.duration()],
        };
        let n = boundaries.len();
        let initial = if n == 1 && episode.subtask_boundaries.is_none() {
            SubtaskList::single(episode.instruction.text())
        } else {
            SubtaskList::new(
                (1..=n as u32)
                    .map(|id| {
                        let start = if id == 1 {
                            "at the starting point".to_string()
                        } else {
                            format!("segment {} completed", id - 1)
                        };
                        Subtask::pending(
                            id,
                            format!("follow annotated segment {id}"),
                            start,
                            format!("segment {id} completed"),
                        )
                    })
                    .collect(),
            )
            .expect("oracle list is well formed")
        };
        Self {
            episode,
            initial,
            boundaries,
        }
    }

    /// The oracle's decision at playback time `t` given the current list.
    pub fn decision_at(&self, t: f64, list: &SubtaskList) -> PolicyDecision {
        let action = self.episode.annotation.action_at(t).unwrap_or(Action::Stop);
        let transition = match focus_subtask(list) {
            Some(id) => {
                let doing = list.get(id).map(|s| s.state) == Some(SubtaskState::Doing);
                let due = self
                    .boundaries
                    .get((id - 1) as usize)
                    .is_some_and(|b| t + TIME_EPSILON >= *b);
                if doing && due {
                    StateTransition::Complete(id)
                } else {
                    StateTransition::None
                }
            }
            None => StateTransition::None,
        };
        PolicyDecision::new(action, transition, "annotated action")
    }
}

impl EpisodeAgent for OracleAgent<'_> {
    fn initial_subtasks(&self) -> &SubtaskList {
        &self.initial
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<PolicyDecision, PolicyError> {
        Ok(self.decision_at(obs.time, obs.subtasks))
    }
}

impl Policy for ScriptedOracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn begin<'a>(&'a self, episode: &'a Episode) -> Result<Box<dyn EpisodeAgent + 'a>, PolicyError> {
        Ok(Box::new(OracleAgent::new(episode)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::{ActionInterval, EpisodeAnnotation, FrameSourceRef, InstructionText, SceneClass, SubtaskBoundary};
    use crate::model::CannedBackend;
    use SubtaskState::*;

    fn list_with(states: &[SubtaskState]) -> SubtaskList {
        SubtaskList::new(
            states
                .iter()
                .enumerate()
                .map(|(i, &state)| Subtask {
                    state,
                    ..Subtask::pending(i as u32 + 1, format!("step {}", i + 1), "start", "end")
                })
                .collect(),
        )
        .unwrap()
    }

    fn episode(intervals: &[(Action, f64, f64)], bounds: Option<&[f64]>) -> Episode {
        let annotation = EpisodeAnnotation::new(
            intervals
                .iter()
                .map(|&(action, t_start, t_end)| ActionInterval { action, t_start, t_end })
                .collect(),
        )
        .unwrap();
        Episode::new(
            "ep",
            SceneClass::Garden,
            InstructionText::new("walk ahead then turn left").unwrap(),
            annotation,
            FrameSourceRef::null(),
            bounds.map(|b| {
                b.iter()
                    .enumerate()
                    .map(|(i, &time)| SubtaskBoundary { ordinal: i as u32 + 1, time })
                    .collect()
            }),
        )
        .unwrap()
    }

    #[test]
    fn state_change_grammar() {
        assert_eq!(parse_state_change("none"), ProposedChange::None);
        assert_eq!(parse_state_change(" None "), ProposedChange::None);
        assert_eq!(
            parse_state_change("subtask 2: doing to done"),
            ProposedChange::Change { subtask_id: 2, from: Doing, to: Done }
        );
        assert_eq!(
            parse_state_change("Subtask NO.3 changes from pending to doing"),
            ProposedChange::Change { subtask_id: 3, from: Pending, to: Doing }
        );
        assert_eq!(parse_state_change("finish it"), ProposedChange::Unrecognized);
        assert_eq!(parse_state_change("subtask 99999999999: doing to done"), ProposedChange::Unrecognized);
    }

    #[test]
    fn plain_forward_reply() {
        let list = list_with(&[Doing, Pending]);
        let backend = CannedBackend::new([r#"{"action":"FORWARD","state_change":"none","reason":"path is clear"}"#]);
        let d = decide(&list, None, &backend, &PromptTemplate::default_decide(), &[], &DecideOptions::default()).unwrap();
        assert_eq!(d, PolicyDecision::new(Action::Forward, StateTransition::None, "path is clear"));
    }

    #[test]
    fn illegal_completion_is_coerced() {
        let list = list_with(&[Doing, Pending]);
        let backend = CannedBackend::new([r#"{"action":"LEFT ROTATE","state_change":"subtask 2: doing to done","reason":"x"}"#]);
        let d = decide(&list, None, &backend, &PromptTemplate::default_decide(), &[], &DecideOptions::default()).unwrap();
        assert_eq!(d.action, Action::LeftRotate);
        assert_eq!(d.transition, StateTransition::None);
        assert!(d.violation.unwrap().contains("not doing"));
    }

    #[test]
    fn legal_completion_passes() {
        let list = list_with(&[Done, Doing]);
        let backend = CannedBackend::new([r#"Sure: {"action":"STOP","state_change":"subtask 2: doing to done","reason":"arrived"}"#]);
        let d = decide(&list, None, &backend, &PromptTemplate::default_decide(), &[], &DecideOptions::default()).unwrap();
        assert_eq!(d.transition, StateTransition::Complete(2));
        assert!(d.violation.is_none());
    }

    #[test]
    fn unparseable_after_one_repair() {
        let list = list_with(&[Pending]);
        let backend = CannedBackend::new(["nope", r#"{"action":"JUMP"}"#]);
        let err = decide(&list, None, &backend, &PromptTemplate::default_decide(), &[], &DecideOptions::default()).unwrap_err();
        match err {
            DecideError::Unparseable { raw, .. } => assert_eq!(raw, r#"{"action":"JUMP"}"#),
            other => panic!("{other:?}"),
        }
        assert_eq!(backend.call_count(), 2);
    }

    #[test]
    fn no_focus_is_an_error() {
        let backend = CannedBackend::new(["{}"]);
        let err = decide(&list_with(&[Done]), None, &backend, &PromptTemplate::default_decide(), &[], &DecideOptions::default());
        assert!(matches!(err, Err(DecideError::NoFocus)));
        assert_eq!(backend.call_count(), 0);
    }

    #[test]
    fn prompt_carries_states_focus_and_image_when_supported() {
        let list = list_with(&[Done, Doing, Pending]);
        let frame = ImagePayload { media_type: "image/png".into(), bytes: vec![9; 4] };
        let reply = r#"{"action":"FORWARD","state_change":"none","reason":""}"#;
        let text_only = CannedBackend::new([reply]);
        decide(&list, Some(&frame), &text_only, &PromptTemplate::default_decide(), &[], &DecideOptions::default()).unwrap();
        let req = &text_only.requests()[0];
        assert!(req.image.is_none());
        assert!(req.user_text.contains("2. [doing] step 2"));
        assert!(req.user_text.contains("Focus subtask: 2"));
        assert!(req.user_text.contains("LEFT ROTATE"));

        let vision = CannedBackend::new([reply]).with_vision(true);
        decide(&list, Some(&frame), &vision, &PromptTemplate::default_decide(), &[], &DecideOptions::default()).unwrap();
        assert_eq!(vision.requests()[0].image.as_ref(), Some(&frame));
    }

    #[test]
    fn decide_is_stateless() {
        let list = list_with(&[Doing, Pending]);
        let reply = r#"{"action":"RIGHT ROTATE","state_change":"subtask 1: doing to done","reason":"r"}"#;
        let backend = CannedBackend::new([reply]);
        let t = PromptTemplate::default_decide();
        let o = DecideOptions::default();
        let a = decide(&list, None, &backend, &t, &[], &o).unwrap();
        let b = decide(&list, None, &backend, &t, &[], &o).unwrap();
        assert_eq!(a, b);
        let reqs = backend.requests();
        assert_eq!(reqs[0], reqs[1]);
    }

    #[test]
    fn random_policy_is_seeded() {
        let ep = episode(&[(Action::Forward, 0.0, 10.0)], None);
        let draw = |seed: u64| {
            let policy = random_policy(seed);
            let mut agent = policy.begin(&ep).unwrap();
            let list = agent.initial_subtasks().clone();
            (0..100)
                .map(|step| {
                    let obs = Observation { time: step as f64, step, subtasks: &list, focus: Some(1), frame: None, history: &[] };
                    agent.decide(&obs).unwrap().action
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(0), draw(0));
        assert_ne!(draw(0), draw(1));
    }

    #[test]
    fn random_policy_is_roughly_uniform() {
        let mut rng = random_policy(7).rng_for("ep");
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[rng.gen_range(0..4)] += 1;
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((f - 0.25).abs() <= 0.05, "{counts:?}");
        }
    }

    #[test]
    fn oracle_lookup_boundary_and_end() {
        let ep = episode(&[(Action::Forward, 0.0, 4.0), (Action::LeftRotate, 4.0, 6.0)], Some(&[4.0, 6.0]));
        let agent = OracleAgent::new(&ep);
        assert_eq!(agent.initial_subtasks().len(), 2);
        let fresh = list_with(&[Doing, Pending]);
        assert_eq!(agent.decision_at(5.0, &fresh).action, Action::LeftRotate);
        assert_eq!(agent.decision_at(2.0, &fresh).transition, StateTransition::None);
        assert_eq!(agent.decision_at(4.0, &fresh).transition, StateTransition::Complete(1));
        assert_eq!(agent.decision_at(6.0, &list_with(&[Done, Doing])).action, Action::Stop);
        assert_eq!(agent.decision_at(7.5, &list_with(&[Done, Doing])).transition, StateTransition::Complete(2));
    }

    #[test]
    fn oracle_without_boundaries_uses_single_subtask() {
        let ep = episode(&[(Action::Forward, 0.0, 3.0)], None);
        let agent = OracleAgent::new(&ep);
        assert_eq!(agent.initial_subtasks().len(), 1);
        assert_eq!(agent.initial_subtasks().subtasks()[0].description, "walk ahead then turn left");
    }
}
