//! Instruction decomposition into a [`SubtaskList`] and the three
//! decomposition checks (atomic subtasks, meaning coverage, condition chaining).
//!
//! Coverage and chaining are token heuristics over a fixed stopword list, so
//! the same inputs always give the same report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episode::InstructionText;
use crate::model::{ModelClient, ModelError, ModelRequest};
use crate::subtask::{Subtask, SubtaskList};
use crate::template::{PromptTemplate, TemplateError};

pub const DEFAULT_COVERAGE_MIN: f64 = 0.6;
pub const DEFAULT_CONNECTION_MIN: f64 = 0.2;

const SYSTEM_TEXT: &str =
    "You decompose navigation instructions for a field robot. Answer with JSON only.";

/// Function words ignored by the token heuristics.
pub const STOPWORDS: [&str; 52] = [
    "a", "an", "the", "and", "or", "but", "then", "so", "to", "of", "in", "on", "at", "by",
    "for", "with", "from", "into", "onto", "as", "is", "are", "was", "were", "be", "been",
    "being", "am", "it", "its", "this", "that", "these", "those", "there", "here", "you",
    "your", "i", "me", "my", "we", "our", "us", "will", "shall", "can", "could", "would",
    "should", "please", "just",
];

/// Lowercases, strips punctuation, drops stopwords.
pub fn content_tokens(text: &str) -> BTreeSet<String> {
    words(text)
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}

/// Lowercased alphanumeric words (apostrophes removed), in order.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.replace('\'', "").to_lowercase())
        .filter(|w| !w.is_empty())
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Principle {
    Particle,
    Synonymity,
    Connection,
}

impl fmt::Display for Principle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Principle::Particle => "particle",
            Principle::Synonymity => "synonymity",
            Principle::Connection => "connection",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Flagged,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub principle: Principle,
    pub verdict: Verdict,
    /// Coverage fraction, minimum Jaccard, or share of atomic subtasks.
    pub score: Option<f64>,
    pub threshold: Option<f64>,
    /// Subtask ids that failed the check.
    pub violators: Vec<u32>,
    pub details: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Re-decomposes every subtask description; a subtask is atomic when the
/// model returns exactly one subtask for it. Backend trouble makes the report
/// inconclusive, never a failure.
pub fn validate_particle(
    list: &SubtaskList,
    model: &dyn ModelClient,
    template: &PromptTemplate,
) -> ValidationReport {
    let mut violators = Vec::new();
    let mut details = Vec::new();
    let mut inconclusive = false;
    for subtask in list.subtasks() {
        let outcome = render_decompose_prompt(template, &subtask.description)
            .map_err(|e| e.to_string())
            .and_then(|prompt| {
                let request = ModelRequest::new(SYSTEM_TEXT, prompt).map_err(|e| e.to_string())?;
                model.complete(&request).map_err(|e| e.to_string())
            })
            .and_then(|reply| parse_subtask_reply(&reply.text));
        match outcome {
            Ok(parts) if parts.len() == 1 => {}
            Ok(parts) => {
                violators.push(subtask.id);
                details.push(format!(
                    "subtask {} splits into {} subtasks",
                    subtask.id,
                    parts.len()
                ));
            }
            Err(e) => {
                inconclusive = true;
                details.push(format!("subtask {}: {e}", subtask.id));
            }
        }
    }
    let checked = list.len();
    let verdict = if inconclusive {
        Verdict::Inconclusive
    } else if violators.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Flagged
    };
    ValidationReport {
        principle: Principle::Particle,
        verdict,
        score: (!inconclusive).then(|| (checked - violators.len()) as f64 / checked as f64),
        threshold: None,
        violators,
        details,
    }
}

/// Fraction of the instruction's content tokens that appear in at least one
/// subtask description. An instruction with no content tokens is fully covered.
pub fn synonymity_coverage(instruction: &InstructionText, list: &SubtaskList) -> f64 {
    let wanted = content_tokens(instruction.text());
    if wanted.is_empty() {
        return 1.0;
    }
    let offered: BTreeSet<String> = list
        .subtasks()
        .iter()
        .flat_map(|s| content_tokens(&s.description))
        .collect();
    wanted.intersection(&offered).count() as f64 / wanted.len() as f64
}

pub fn validate_synonymity(
    instruction: &InstructionText,
    list: &SubtaskList,
    coverage_min: f64,
) -> ValidationReport {
    let coverage = synonymity_coverage(instruction, list);
    let offered: BTreeSet<String> = list
        .subtasks()
        .iter()
        .flat_map(|s| content_tokens(&s.description))
        .collect();
    let missing: Vec<String> = content_tokens(instruction.text())
        .difference(&offered)
        .cloned()
        .collect();
    let pass = coverage >= coverage_min;
    ValidationReport {
        principle: Principle::Synonymity,
        verdict: if pass { Verdict::Pass } else { Verdict::Flagged },
        score: Some(coverage),
        threshold: Some(coverage_min),
        violators: Vec::new(),
        details: if missing.is_empty() {
            Vec::new()
        } else {
            vec![format!("uncovered tokens: {}", missing.join(", "))]
        },
    }
}

/// Jaccard similarity of each start condition with the previous end condition.
pub fn connection_scores(list: &SubtaskList) -> Vec<(u32, f64)> {
    list.subtasks()
        .windows(2)
        .map(|w| {
            (
                w[1].id,
                jaccard(
                    &content_tokens(&w[1].start_condition),
                    &content_tokens(&w[0].end_condition),
                ),
            )
        })
        .collect()
}

pub fn validate_connection(list: &SubtaskList, connection_min: f64) -> ValidationReport {
    let scores = connection_scores(list);
    let violators: Vec<u32> = scores
        .iter()
        .filter(|(_, s)| *s < connection_min)
        .map(|(id, _)| *id)
        .collect();
    let details = violators
        .iter()
        .map(|id| {
            let score = scores.iter().find(|(i, _)| i == id).map(|(_, s)| *s).unwrap_or(0.0);
            format!(
                "subtask {id} start condition does not follow subtask {} end condition (jaccard {score:.3})",
                id - 1
            )
        })
        .collect();
    ValidationReport {
        principle: Principle::Connection,
        verdict: if violators.is_empty() {
            Verdict::Pass
        } else {
            Verdict::Flagged
        },
        score: Some(scores.iter().map(|(_, s)| *s).fold(1.0, f64::min)),
        threshold: Some(connection_min),
        violators,
        details,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposeOptions {
    /// Fail decomposition when any check is flagged.
    pub strict: bool,
    pub check_particle: bool,
    pub coverage_min: f64,
    pub connection_min: f64,
    pub max_reply_tokens: u32,
    pub temperature: f64,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            strict: false,
            check_particle: true,
            coverage_min: DEFAULT_COVERAGE_MIN,
            connection_min: DEFAULT_CONNECTION_MIN,
            max_reply_tokens: 1024,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub list: SubtaskList,
    pub reports: Vec<ValidationReport>,
    pub raw_reply: String,
}

impl Decomposition {
    pub fn report(&self, principle: Principle) -> Option<&ValidationReport> {
        self.reports.iter().find(|r| r.principle == principle)
    }
}

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("model backend failed: {0}")]
    Backend(#[from] ModelError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("unparseable decomposition reply ({reason}); raw reply: {raw}")]
    Unparseable { raw: String, reason: String },
    #[error("decomposition failed the {} check", report.principle)]
    Validation { report: ValidationReport, list: SubtaskList },
}

fn render_decompose_prompt(template: &PromptTemplate, instruction: &str) -> Result<String, TemplateError> {
    template.require(&["instruction"])?;
    let mut values = BTreeMap::new();
    values.insert("instruction", instruction.to_string());
    // Optional slots some custom templates use.
    values.insert("subtasks", String::new());
    values.insert("focus_id", String::new());
    template.render(&values)
}

/// Returns the slice from the first `open` to the last `close`, which tolerates
/// code fences and chatter around a JSON payload.
pub(crate) fn extract_json(text: &str, open: char, close: char) -> Option<&str> {
    let start = text.find(open)?;
    let end = text.rfind(close)?;
    (end > start).then(|| &text[start..=end])
}

#[derive(Deserialize)]
struct RawSubtask {
    id: serde_json::Value,
    description: String,
    start_condition: String,
    end_condition: String,
}

/// Parses a decomposition reply into a fresh all-pending list.
pub fn parse_subtask_reply(text: &str) -> Result<SubtaskList, String> {
    let value: serde_json::Value = match extract_json(text, '[', ']') {
        Some(slice) => serde_json::from_str(slice).map_err(|e| format!("invalid JSON: {e}"))?,
        None => {
            let slice = extract_json(text, '{', '}').ok_or("no JSON array in reply")?;
            let obj: serde_json::Value =
                serde_json::from_str(slice).map_err(|e| format!("invalid JSON: {e}"))?;
            obj.get("subtasks").cloned().ok_or("no JSON array in reply")?
        }
    };
    let raw: Vec<RawSubtask> =
        serde_json::from_value(value).map_err(|e| format!("unexpected shape: {e}"))?;
    let subtasks = raw
        .into_iter()
        .map(|r| {
            let id = match &r.id {
                serde_json::Value::Number(n) => n.as_u64(),
                serde_json::Value::String(s) => s.trim().parse().ok(),
                _ => None,
            }
            .and_then(|n| u32::try_from(n).ok())
            .ok_or_else(|| format!("bad subtask id {}", r.id))?;
            Ok(Subtask::pending(id, r.description, r.start_condition, r.end_condition))
        })
        .collect::<Result<Vec<_>, String>>()?;
    SubtaskList::all_pending(subtasks).map_err(|e| e.to_string())
}

fn repair_prompt(original: &str, raw: &str, reason: &str) -> String {
    format!(
        "{original}\n\nYour previous reply could not be used ({reason}).\nPrevious reply:\n{raw}\n\n\
         Reply again with only the JSON array described above, with ids 1..N in order and no empty fields."
    )
}

/// Asks the model for a subtask list, repairing one unparseable reply, then
/// runs the checks. Every subtask starts pending.
pub fn decompose(
    instruction: &InstructionText,
    model: &dyn ModelClient,
    template: &PromptTemplate,
    options: &DecomposeOptions,
) -> Result<Decomposition, DecomposeError> {
    let prompt = render_decompose_prompt(template, instruction.text())?;
    let ask = |text: String| -> Result<String, DecomposeError> {
        let request = ModelRequest::new(SYSTEM_TEXT, text)?
            .with_max_reply_tokens(options.max_reply_tokens)
            .with_temperature(options.temperature);
        Ok(model.complete(&request)?.text)
    };

    let first = ask(prompt.clone())?;
    let (list, raw_reply) = match parse_subtask_reply(&first) {
        Ok(list) => (list, first),
        Err(reason) => {
            let second = ask(repair_prompt(&prompt, &first, &reason))?;
            match parse_subtask_reply(&second) {
                Ok(list) => (list, second),
                Err(reason) => {
                    return Err(DecomposeError::Unparseable { raw: second, reason });
                }
            }
        }
    };

    let mut reports = Vec::with_capacity(3);
    if options.check_particle {
        reports.push(validate_particle(&list, model, template));
    }
    reports.push(validate_synonymity(instruction, &list, options.coverage_min));
    reports.push(validate_connection(&list, options.connection_min));

    if options.strict {
        if let Some(report) = reports.iter().find(|r| r.verdict == Verdict::Flagged) {
            return Err(DecomposeError::Validation {
                report: report.clone(),
                list,
            });
        }
    }
    Ok(Decomposition {
        list,
        reports,
        raw_reply,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CannedBackend, NullBackend};
    use crate::subtask::SubtaskState;

    fn list(items: &[(&str, &str, &str)]) -> SubtaskList {
        SubtaskList::new(
            items
                .iter()
                .enumerate()
                .map(|(i, (d, sc, ec))| Subtask::pending(i as u32 + 1, *d, *sc, *ec))
                .collect(),
        )
        .unwrap()
    }

    const TWO: &str = r#"[{"id":1,"description":"go forward to the tree","start_condition":"at the start","end_condition":"reach the tree"},
{"id":2,"description":"stop at the tree","start_condition":"at the tree","end_condition":"stopped at the tree"}]"#;

    #[test]
    fn tokens_drop_stopwords_and_punctuation() {
        let t = content_tokens("Reach the Tree, then STOP!");
        assert_eq!(t.into_iter().collect::<Vec<_>>(), ["reach", "stop", "tree"]);
        assert_eq!(STOPWORDS.len(), 52);
    }

    #[test]
    fn synonymity_full_and_empty_overlap() {
        let instr = InstructionText::new("Go to the tree and stop").unwrap();
        let full = list(&[("go to the tree", "s", "e"), ("stop", "s", "e")]);
        let r = validate_synonymity(&instr, &full, DEFAULT_COVERAGE_MIN);
        assert_eq!((r.verdict, r.score), (Verdict::Pass, Some(1.0)));
        let none = list(&[("wander about", "s", "e")]);
        let r = validate_synonymity(&instr, &none, DEFAULT_COVERAGE_MIN);
        assert_eq!((r.verdict, r.score), (Verdict::Flagged, Some(0.0)));
    }

    #[test]
    fn synonymity_partial_coverage() {
        // {cross, bridge, turn, right}; descriptions cover three of four.
        let instr = InstructionText::new("cross the bridge, turn right").unwrap();
        let l = list(&[("cross the bridge", "s", "e"), ("turn", "s", "e")]);
        let r = validate_synonymity(&instr, &l, DEFAULT_COVERAGE_MIN);
        assert_eq!(r.score, Some(0.75));
        assert!(r.passed());
    }

    #[test]
    fn connection_examples() {
        let l = list(&[("a", "start", "reach the tree"), ("b", "at the tree", "done")]);
        let r = validate_connection(&l, DEFAULT_CONNECTION_MIN);
        assert_eq!(r.score, Some(0.5));
        assert!(r.passed());

        let l = list(&[("a", "start", "facing the gate"), ("b", "beside the pond", "done")]);
        let r = validate_connection(&l, DEFAULT_CONNECTION_MIN);
        assert_eq!(r.score, Some(0.0));
        assert_eq!(r.violators, vec![2]);
        assert_eq!(r.verdict, Verdict::Flagged);

        let single = list(&[("a", "start", "end")]);
        assert!(validate_connection(&single, DEFAULT_CONNECTION_MIN).passed());
    }

    #[test]
    fn particle_pass_flag_and_inconclusive() {
        let template = PromptTemplate::default_decompose();
        let l = list(&[("turn left", "s", "e")]);
        let one = CannedBackend::new([r#"[{"id":1,"description":"turn left","start_condition":"s","end_condition":"e"}]"#]);
        assert_eq!(validate_particle(&l, &one, &template).verdict, Verdict::Pass);

        let l = list(&[("go to the shed then enter it", "s", "e")]);
        let two = CannedBackend::new([TWO]);
        let r = validate_particle(&l, &two, &template);
        assert_eq!((r.verdict, r.violators.clone()), (Verdict::Flagged, vec![1]));

        assert_eq!(validate_particle(&l, &NullBackend, &template).verdict, Verdict::Inconclusive);
    }

    #[test]
    fn decompose_returns_pending_list() {
        let instr = InstructionText::new("Go forward and stop at the tree.").unwrap();
        let backend = CannedBackend::new([TWO]);
        let options = DecomposeOptions {
            check_particle: false,
            ..DecomposeOptions::default()
        };
        let d = decompose(&instr, &backend, &PromptTemplate::default_decompose(), &options).unwrap();
        assert_eq!(d.list.len(), 2);
        assert!(d.list.states().iter().all(|s| *s == SubtaskState::Pending));
        assert!(d.reports.iter().all(ValidationReport::passed));
        assert!(backend.requests()[0].user_text.contains("Go forward and stop at the tree."));
    }

    #[test]
    fn decompose_resets_states_and_tolerates_fences() {
        let instr = InstructionText::new("walk to the door").unwrap();
        let reply = "```json\n[{\"id\":\"1\",\"description\":\"walk to the door\",\"start_condition\":\"start\",\"end_condition\":\"at the door\",\"state\":\"done\"}]\n```";
        let d = decompose(
            &instr,
            &CannedBackend::new([reply]),
            &PromptTemplate::default_decompose(),
            &DecomposeOptions::default(),
        )
        .unwrap();
        assert_eq!(d.list.states(), vec![SubtaskState::Pending]);
    }

    #[test]
    fn decompose_repairs_once_then_gives_up() {
        let instr = InstructionText::new("walk to the door").unwrap();
        let template = PromptTemplate::default_decompose();
        let options = DecomposeOptions {
            check_particle: false,
            ..DecomposeOptions::default()
        };
        let fixed = CannedBackend::new(["sorry, no", TWO]);
        assert!(decompose(&instr, &fixed, &template, &options).is_ok());
        assert!(fixed.requests()[1].user_text.contains("sorry, no"));

        let broken = CannedBackend::new(["garbage", "still garbage"]);
        let err = decompose(&instr, &broken, &template, &options).unwrap_err();
        match err {
            DecomposeError::Unparseable { raw, .. } => assert_eq!(raw, "still garbage"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(broken.call_count(), 2);
    }

    #[test]
    fn structural_errors_are_parse_failures() {
        assert!(parse_subtask_reply(r#"[{"id":2,"description":"a","start_condition":"b","end_condition":"c"}]"#).is_err());
        assert!(parse_subtask_reply(r#"[{"id":1,"description":"","start_condition":"b","end_condition":"c"}]"#).is_err());
        assert!(parse_subtask_reply("[]").is_err());
        let wrapped = r#"{"subtasks":[{"id":1,"description":"a","start_condition":"b","end_condition":"c"}]}"#;
        assert_eq!(parse_subtask_reply(wrapped).unwrap().len(), 1);
    }

    #[test]
    fn strict_mode_rejects_flagged_connection() {
        let instr = InstructionText::new("face the gate then go beside the pond").unwrap();
        let reply = r#"[{"id":1,"description":"face the gate","start_condition":"start","end_condition":"facing the gate"},
{"id":2,"description":"go beside the pond","start_condition":"beside the pond","end_condition":"done"}]"#;
        let template = PromptTemplate::default_decompose();
        let lax = DecomposeOptions {
            check_particle: false,
            ..DecomposeOptions::default()
        };
        let d = decompose(&instr, &CannedBackend::new([reply]), &template, &lax).unwrap();
        assert_eq!(d.report(Principle::Connection).unwrap().verdict, Verdict::Flagged);

        let strict = DecomposeOptions { strict: true, ..lax };
        match decompose(&instr, &CannedBackend::new([reply]), &template, &strict) {
            Err(DecomposeError::Validation { report, .. }) => {
                assert_eq!(report.principle, Principle::Connection)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn backend_failure_surfaces() {
        let instr = InstructionText::new("walk").unwrap();
        assert!(matches!(
            decompose(&instr, &NullBackend, &PromptTemplate::default_decompose(), &DecomposeOptions::default()),
            Err(DecomposeError::Backend(_))
        ));
    }
}
