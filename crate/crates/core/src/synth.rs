//! Deterministic synthetic episodes and dataset statistics.
//!
//! Each subtask is a motion segment: an optional turn followed by a straight
//! walk. Durations are whole multiples of `time_quantum`, so with the default
//! one-second decision period the annotated actions line up with decision ticks.
//! The cumulative heading stays within 60 degrees of straight ahead, so every
//! walk makes progress away from the start.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::words;
use crate::episode::{
    Action, ActionInterval, Episode, EpisodeAnnotation, FrameSourceRef, InstructionText,
    SceneClass, SubtaskBoundary,
};

/// Heading offsets are limited to this many degrees either side of straight.
const MAX_HEADING_DEGREES: f64 = 60.0;
/// Nominal metres per second and degrees per second used to phrase instructions.
const PHRASE_SPEED: f64 = 0.5;
const PHRASE_DEGREES_PER_SECOND: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstructionStyle {
    Concise,
    Noisy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n_episodes: usize,
    pub scene_mix: BTreeMap<SceneClass, f64>,
    /// Inclusive `[min, max]` subtasks per episode.
    pub subtask_count_range: [u32; 2],
    /// Weight ratio between consecutive subtask counts; below 1 favours short episodes.
    pub subtask_count_decay: f64,
    /// Inclusive `[min, max]` seconds of walking per subtask.
    pub segment_duration_range: [f64; 2],
    pub time_quantum: f64,
    pub instruction_style: InstructionStyle,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_episodes: 100,
            scene_mix: SceneClass::ALL.iter().map(|s| (*s, 1.0)).collect(),
            subtask_count_range: [2, 8],
            subtask_count_decay: 0.4,
            segment_duration_range: [6.0, 14.0],
            time_quantum: 1.0,
            instruction_style: InstructionStyle::Noisy,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GeneratorError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("statistics need at least one episode")]
    Empty,
    #[error("{episodes} episodes but {counts} subtask counts")]
    CountMismatch { episodes: usize, counts: usize },
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        let bad = |m: &str| Err(GeneratorError::InvalidSpec(m.to_string()));
        if self.scene_mix.is_empty() {
            return bad("scene_mix is empty");
        }
        if self.scene_mix.values().any(|w| !(w.is_finite() && *w > 0.0)) {
            return bad("scene weights must be positive");
        }
        let [lo, hi] = self.subtask_count_range;
        if lo < 1 || lo > hi {
            return bad("subtask_count_range must satisfy 1 <= min <= max");
        }
        if !(self.subtask_count_decay.is_finite() && self.subtask_count_decay > 0.0) {
            return bad("subtask_count_decay must be positive");
        }
        if !(self.time_quantum.is_finite() && self.time_quantum > 0.0) {
            return bad("time_quantum must be positive");
        }
        let [dlo, dhi] = self.segment_duration_range;
        if !(dlo.is_finite() && dhi.is_finite() && dlo >= self.time_quantum && dlo <= dhi) {
            return bad("segment_duration_range must satisfy quantum <= min <= max");
        }
        Ok(())
    }

    fn quanta_range(&self) -> (u64, u64) {
        let [lo, hi] = self.segment_duration_range;
        let lo = (lo / self.time_quantum).ceil().max(1.0) as u64;
        let hi = ((hi / self.time_quantum).floor() as u64).max(lo);
        (lo, hi)
    }
}

fn landmarks(scene: SceneClass) -> &'static [&'static str] {
    match scene {
        SceneClass::Farm => &["haystack", "tractor", "water trough", "wooden fence", "corn row", "feed barrel"],
        SceneClass::Greenhouse => &["tomato rack", "watering hose", "seedling tray", "plastic curtain", "strawberry bed", "pump station"],
        SceneClass::Forest => &["pine tree", "fallen log", "stone marker", "bamboo grove", "mossy rock", "trail sign"],
        SceneClass::Mountain => &["tea terrace", "boulder", "stone steps", "orchard gate", "irrigation ditch", "hillside shed"],
        SceneClass::Garden => &["flower bed", "fish pond", "garden bench", "rose arch", "vegetable patch", "tool shed"],
        SceneClass::Village => &["brick wall", "courtyard gate", "well", "drying rack", "stone bridge", "chicken coop"],
    }
}

const CONNECTIVES: [&str; 4] = ["then", "after that", "next", "and then"];
const FILLERS: [&str; 8] = [
    "the ground is a bit muddy today so take it easy",
    "don't mind the chickens running around",
    "I think the boss said something about this yesterday",
    "you know, just like last time",
    "well, if I remember correctly",
    "the sun is pretty strong right now",
    "ignore the noise from the pump over there",
    "honestly it is not that far",
];

fn turn_clause(quanta: i64, quantum: f64) -> String {
    let direction = if quanta > 0 { "left" } else { "right" };
    let degrees = (quanta.unsigned_abs() as f64 * quantum * PHRASE_DEGREES_PER_SECOND).round();
    format!("turn {direction} about {degrees} degrees")
}

fn walk_clause(seconds: f64, landmark: &str) -> String {
    let metres = seconds * PHRASE_SPEED;
    let metres = if metres.fract() == 0.0 {
        format!("{metres:.0}")
    } else {
        format!("{metres:.1}")
    };
    format!("walk forward about {metres} meters to the {landmark}")
}

fn push_interval(intervals: &mut Vec<ActionInterval>, action: Action, t_start: f64, t_end: f64) {
    if let Some(last) = intervals.last_mut() {
        if last.action == action {
            last.t_end = t_end;
            return;
        }
    }
    intervals.push(ActionInterval { action, t_start, t_end });
}

fn episode_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Generates one episode; depends only on `(spec, index)`.
pub fn generate_episode(spec: &GeneratorSpec, index: usize) -> Episode {
    let mut rng = episode_rng(spec.seed, index);
    let scenes: Vec<(SceneClass, f64)> = spec.scene_mix.iter().map(|(s, w)| (*s, *w)).collect();
    let scene_pick = WeightedIndex::new(scenes.iter().map(|(_, w)| *w)).expect("validated weights");
    let scene = scenes[scene_pick.sample(&mut rng)].0;

    let [lo, hi] = spec.subtask_count_range;
    let count_weights: Vec<f64> = (lo..=hi)
        .map(|k| spec.subtask_count_decay.powi((k - lo) as i32))
        .collect();
    let count_pick = WeightedIndex::new(&count_weights).expect("positive weights");
    let n_subtasks = lo + count_pick.sample(&mut rng) as u32;

    let q = spec.time_quantum;
    let (walk_lo, walk_hi) = spec.quanta_range();
    let bank = landmarks(scene);
    let noisy = spec.instruction_style == InstructionStyle::Noisy;

    let mut intervals = Vec::new();
    let mut boundaries = Vec::new();
    let mut clauses = Vec::new();
    let max_heading = (MAX_HEADING_DEGREES / (q * PHRASE_DEGREES_PER_SECOND) + 1e-9).floor() as i64;
    let mut heading: i64 = 0;
    let mut ticks: u64 = 0;
    let time = |ticks: u64| ticks as f64 * q;

    for ordinal in 1..=n_subtasks {
        let mut parts = Vec::new();
        // The first segment turns less often: the start pose is usually already aimed.
        let turn_probability = if ordinal == 1 { 0.3 } else { 0.7 };
        if max_heading > 0 && rng.gen_bool(turn_probability) {
            let options: Vec<i64> = (-max_heading..=max_heading)
                .filter(|h| *h != heading)
                .collect();
            let target = options[rng.gen_range(0..options.len())];
            let delta = target - heading;
            let action = if delta > 0 { Action::LeftRotate } else { Action::RightRotate };
            let span = delta.unsigned_abs();
            push_interval(&mut intervals, action, time(ticks), time(ticks + span));
            ticks += span;
            heading = target;
            parts.push(turn_clause(delta, q));
        }
        let walk = rng.gen_range(walk_lo..=walk_hi);
        push_interval(&mut intervals, Action::Forward, time(ticks), time(ticks + walk));
        ticks += walk;
        boundaries.push(SubtaskBoundary { ordinal, time: time(ticks) });
        let landmark = bank[rng.gen_range(0..bank.len())];
        parts.push(walk_clause(time(walk), landmark));

        let mut clause = parts.join(" and ");
        if ordinal > 1 {
            clause = format!("{} {clause}", CONNECTIVES[rng.gen_range(0..CONNECTIVES.len())]);
        }
        if noisy && rng.gen_bool(0.5) {
            clause = format!("{clause}, {}", FILLERS[rng.gen_range(0..FILLERS.len())]);
        }
        clauses.push(clause);
    }
    push_interval(&mut intervals, Action::Stop, time(ticks), time(ticks + 1));

    let mut text = clauses.join(", ");
    if noisy && rng.gen_bool(0.5) {
        text = format!("Okay, {}, {text}", FILLERS[rng.gen_range(0..FILLERS.len())]);
    }
    text.push_str(", and stop there.");
    let mut chars = text.chars();
    let text = match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => text,
    };

    Episode::new(
        format!("ep-{index:05}"),
        scene,
        InstructionText::new(text).expect("instruction is non-empty"),
        EpisodeAnnotation::new(intervals).expect("generated annotation is contiguous"),
        FrameSourceRef {
            nominal_fps: 14.0,
            ..FrameSourceRef::null()
        },
        Some(boundaries),
    )
    .expect("generated boundaries are ordered")
}

/// Generates `spec.n_episodes` episodes; each depends only on the seed and its index.
pub fn generate(spec: &GeneratorSpec) -> Result<Vec<Episode>, GeneratorError> {
    spec.validate()?;
    Ok((0..spec.n_episodes).map(|i| generate_episode(spec, i)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    pub episodes_per_scene: BTreeMap<SceneClass, usize>,
    pub length_histogram: BTreeMap<usize, usize>,
    pub length_mean: f64,
    pub subtask_histogram: BTreeMap<usize, usize>,
    pub subtask_mean: f64,
    /// Sorted by count (descending) then word.
    pub word_frequencies: Vec<(String, usize)>,
}

/// `subtask_counts[i]` is the subtask count of `episodes[i]`.
pub fn compute_stats(
    episodes: &[Episode],
    subtask_counts: &[usize],
) -> Result<DatasetStats, GeneratorError> {
    if episodes.is_empty() {
        return Err(GeneratorError::Empty);
    }
    if episodes.len() != subtask_counts.len() {
        return Err(GeneratorError::CountMismatch {
            episodes: episodes.len(),
            counts: subtask_counts.len(),
        });
    }
    let mut episodes_per_scene: BTreeMap<SceneClass, usize> =
        SceneClass::ALL.iter().map(|s| (*s, 0)).collect();
    let mut length_histogram = BTreeMap::new();
    let mut subtask_histogram = BTreeMap::new();
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for (episode, &n) in episodes.iter().zip(subtask_counts) {
        *episodes_per_scene.entry(episode.scene_class).or_default() += 1;
        *length_histogram.entry(episode.instruction.word_count()).or_default() += 1;
        *subtask_histogram.entry(n).or_default() += 1;
        for w in words(episode.instruction.text()) {
            *freq.entry(w).or_default() += 1;
        }
    }
    let total = episodes.len();
    let mean = |h: &BTreeMap<usize, usize>| {
        h.iter().map(|(k, c)| (k * c) as f64).sum::<f64>() / total as f64
    };
    let mut word_frequencies: Vec<(String, usize)> = freq.into_iter().collect();
    word_frequencies.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(DatasetStats {
        total,
        length_mean: mean(&length_histogram),
        subtask_mean: mean(&subtask_histogram),
        episodes_per_scene,
        length_histogram,
        subtask_histogram,
        word_frequencies,
    })
}

impl DatasetStats {
    /// Plain-text summary; `top_words` limits the frequency table.
    pub fn render_text(&self, top_words: usize) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "episodes: {}", self.total);
        for (scene, n) in &self.episodes_per_scene {
            let _ = writeln!(out, "  {:<11} {n}", scene.as_str());
        }
        let _ = writeln!(out, "instruction length: mean {:.1} words", self.length_mean);
        let (lo, hi) = (
            self.length_histogram.keys().next().copied().unwrap_or(0),
            self.length_histogram.keys().next_back().copied().unwrap_or(0),
        );
        let _ = writeln!(out, "  range {lo}..{hi}");
        let _ = writeln!(out, "subtasks per episode: mean {:.2}", self.subtask_mean);
        for (n, c) in &self.subtask_histogram {
            let _ = writeln!(out, "  {n:>3} {c}");
        }
        let _ = writeln!(out, "top words:");
        for (w, c) in self.word_frequencies.iter().take(top_words) {
            let _ = writeln!(out, "  {w:<16} {c}");
        }
        out
    }

    /// Long-form CSV: `section,key,value`.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("section,key,value\n");
        let _ = writeln!(out, "total,episodes,{}", self.total);
        for (scene, n) in &self.episodes_per_scene {
            let _ = writeln!(out, "scene,{scene},{n}");
        }
        let _ = writeln!(out, "length,mean,{}", self.length_mean);
        for (k, c) in &self.length_histogram {
            let _ = writeln!(out, "length_histogram,{k},{c}");
        }
        let _ = writeln!(out, "subtasks,mean,{}", self.subtask_mean);
        for (k, c) in &self.subtask_histogram {
            let _ = writeln!(out, "subtask_histogram,{k},{c}");
        }
        for (w, c) in &self.word_frequencies {
            let _ = writeln!(out, "word,{w},{c}");
        }
        out
    }
}
