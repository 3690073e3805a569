//! Subtask lists and the pending/doing/done state machine.
//!
//! A list is always in the shape `DONE* (DOING | nothing) PENDING*`. Only two
//! transitions exist: starting the lowest pending subtask once everything
//! before it is done, and completing the subtask that is currently doing.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubtaskState {
    Pending,
    Doing,
    Done,
}

impl SubtaskState {
    pub fn as_str(self) -> &'static str {
        match self {
            SubtaskState::Pending => "pending",
            SubtaskState::Doing => "doing",
            SubtaskState::Done => "done",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pending" => Some(SubtaskState::Pending),
            "doing" => Some(SubtaskState::Doing),
            "done" => Some(SubtaskState::Done),
            _ => None,
        }
    }
}

impl fmt::Display for SubtaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    pub id: u32,
    pub description: String,
    pub start_condition: String,
    pub end_condition: String,
    pub state: SubtaskState,
}

impl Subtask {
    pub fn pending(
        id: u32,
        description: impl Into<String>,
        start_condition: impl Into<String>,
        end_condition: impl Into<String>,
    ) -> Self {
        Self {
            id,
            description: description.into(),
            start_condition: start_condition.into(),
            end_condition: end_condition.into(),
            state: SubtaskState::Pending,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ListError {
    #[error("subtask list is empty")]
    Empty,
    #[error("subtask at position {position} has id {found}, expected {expected}")]
    BadId {
        position: usize,
        found: u32,
        expected: u32,
    },
    #[error("subtask {id}: {field} is empty")]
    EmptyField { id: u32, field: &'static str },
    #[error("states do not follow done* (doing)? pending*: {0}")]
    BadStatePattern(String),
}

/// Ordered, validated subtasks with ids `1..=N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubtaskList {
    subtasks: Vec<Subtask>,
}

impl<'de> Deserialize<'de> for SubtaskList {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            subtasks: Vec<Subtask>,
        }
        let raw = Raw::deserialize(deserializer)?;
        SubtaskList::new(raw.subtasks).map_err(serde::de::Error::custom)
    }
}

impl SubtaskList {
    pub fn new(subtasks: Vec<Subtask>) -> Result<Self, ListError> {
        if subtasks.is_empty() {
            return Err(ListError::Empty);
        }
        for (position, s) in subtasks.iter().enumerate() {
            let expected = position as u32 + 1;
            if s.id != expected {
                return Err(ListError::BadId {
                    position,
                    found: s.id,
                    expected,
                });
            }
            for (field, value) in [
                ("description", &s.description),
                ("start_condition", &s.start_condition),
                ("end_condition", &s.end_condition),
            ] {
                if value.trim().is_empty() {
                    return Err(ListError::EmptyField { id: s.id, field });
                }
            }
        }
        let states: Vec<_> = subtasks.iter().map(|s| s.state).collect();
        if !is_valid_state_pattern(&states) {
            return Err(ListError::BadStatePattern(
                states.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(","),
            ));
        }
        Ok(Self { subtasks })
    }

    /// A fresh list: every subtask reset to pending.
    pub fn all_pending(subtasks: Vec<Subtask>) -> Result<Self, ListError> {
        Self::new(
            subtasks
                .into_iter()
                .map(|s| Subtask {
                    state: SubtaskState::Pending,
                    ..s
                })
                .collect(),
        )
    }

    /// The whole instruction as one subtask; used when decomposition is disabled.
    pub fn single(instruction: &str) -> Self {
        Self {
            subtasks: vec![Subtask::pending(
                1,
                instruction,
                "at the starting point",
                "the instruction is accomplished",
            )],
        }
    }

    pub fn subtasks(&self) -> &[Subtask] {
        &self.subtasks
    }

    pub fn len(&self) -> usize {
        self.subtasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subtasks.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&Subtask> {
        id.checked_sub(1).and_then(|i| self.subtasks.get(i as usize))
    }

    pub fn states(&self) -> Vec<SubtaskState> {
        self.subtasks.iter().map(|s| s.state).collect()
    }

    pub fn all_done(&self) -> bool {
        self.subtasks.iter().all(|s| s.state == SubtaskState::Done)
    }

    pub fn done_count(&self) -> usize {
        self.subtasks
            .iter()
            .filter(|s| s.state == SubtaskState::Done)
            .count()
    }
}

/// True iff `states` matches `DONE* (DOING | nothing) PENDING*`.
pub fn is_valid_state_pattern(states: &[SubtaskState]) -> bool {
    let mut i = 0;
    while i < states.len() && states[i] == SubtaskState::Done {
        i += 1;
    }
    if i < states.len() && states[i] == SubtaskState::Doing {
        i += 1;
    }
    states[i..].iter().all(|s| *s == SubtaskState::Pending)
}

/// A single proposed state change, or no change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "subtask")]
pub enum StateTransition {
    None,
    /// pending -> doing
    Start(u32),
    /// doing -> done
    Complete(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("subtask {subtask_id}: no transition from {from} to {to}")]
pub struct UnsupportedTransition {
    pub subtask_id: u32,
    pub from: SubtaskState,
    pub to: SubtaskState,
}

impl StateTransition {
    /// Only pending->doing and doing->done can be constructed.
    pub fn from_states(
        subtask_id: u32,
        from: SubtaskState,
        to: SubtaskState,
    ) -> Result<Self, UnsupportedTransition> {
        match (from, to) {
            (SubtaskState::Pending, SubtaskState::Doing) => Ok(StateTransition::Start(subtask_id)),
            (SubtaskState::Doing, SubtaskState::Done) => Ok(StateTransition::Complete(subtask_id)),
            _ => Err(UnsupportedTransition {
                subtask_id,
                from,
                to,
            }),
        }
    }

    pub fn subtask_id(self) -> Option<u32> {
        match self {
            StateTransition::None => None,
            StateTransition::Start(id) | StateTransition::Complete(id) => Some(id),
        }
    }

    pub fn is_none(self) -> bool {
        self == StateTransition::None
    }
}

impl fmt::Display for StateTransition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateTransition::None => f.write_str("none"),
            StateTransition::Start(id) => write!(f, "subtask {id}: pending to doing"),
            StateTransition::Complete(id) => write!(f, "subtask {id}: doing to done"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransitionError {
    #[error("subtask {id} does not exist (list has {len})")]
    UnknownSubtask { id: u32, len: usize },
    #[error("cannot start subtask {id}: subtask {blocking} is not done")]
    PredecessorNotDone { id: u32, blocking: u32 },
    #[error("cannot start subtask {id}: subtask {doing} is already doing")]
    AnotherDoing { id: u32, doing: u32 },
    #[error("cannot start subtask {id}: it is {state}, not pending")]
    NotPending { id: u32, state: SubtaskState },
    #[error("cannot complete subtask {id}: it is {state}, not doing")]
    NotDoing { id: u32, state: SubtaskState },
}

/// Applies `transition`, returning the updated list. Illegal transitions are
/// rejected and leave the input untouched.
pub fn apply_transition(
    list: &SubtaskList,
    transition: StateTransition,
) -> Result<SubtaskList, TransitionError> {
    let (id, target) = match transition {
        StateTransition::None => return Ok(list.clone()),
        StateTransition::Start(id) => (id, SubtaskState::Doing),
        StateTransition::Complete(id) => (id, SubtaskState::Done),
    };
    let current = list
        .get(id)
        .ok_or(TransitionError::UnknownSubtask { id, len: list.len() })?
        .state;
    match transition {
        StateTransition::Start(_) => {
            if current != SubtaskState::Pending {
                return Err(TransitionError::NotPending { id, state: current });
            }
            if let Some(doing) = list
                .subtasks
                .iter()
                .find(|s| s.state == SubtaskState::Doing)
            {
                return Err(TransitionError::AnotherDoing { id, doing: doing.id });
            }
            if let Some(blocking) = list.subtasks[..(id - 1) as usize]
                .iter()
                .find(|s| s.state != SubtaskState::Done)
            {
                return Err(TransitionError::PredecessorNotDone {
                    id,
                    blocking: blocking.id,
                });
            }
        }
        StateTransition::Complete(_) => {
            if current != SubtaskState::Doing {
                return Err(TransitionError::NotDoing { id, state: current });
            }
        }
        StateTransition::None => unreachable!(),
    }
    let mut next = list.clone();
    next.subtasks[(id - 1) as usize].state = target;
    debug_assert!(is_valid_state_pattern(&next.states()));
    Ok(next)
}

/// The subtask to attend to: the doing one if any, else the lowest pending id,
/// else `None` when everything is done.
pub fn focus_subtask(list: &SubtaskList) -> Option<u32> {
    list.subtasks
        .iter()
        .find(|s| s.state == SubtaskState::Doing)
        .or_else(|| {
            list.subtasks
                .iter()
                .filter(|s| s.state == SubtaskState::Pending)
                .min_by_key(|s| s.id)
        })
        .map(|s| s.id)
}
