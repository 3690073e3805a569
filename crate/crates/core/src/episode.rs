//! Episodes, the temporal-interval annotation document and episode manifests.
//!
//! An annotation is a JSON array of `{"action": .., "time range": [t1, t2]}`
//! objects. Adjacent identical actions are clustered into one interval, so a
//! valid document has contiguous intervals whose neighbours differ in action.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking that one interval starts where the previous ends.
/// Times carry millisecond precision, so anything below half a millisecond is noise.
pub const TIME_EPSILON: f64 = 5e-4;

/// One of the four low-level robot actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Forward,
    LeftRotate,
    RightRotate,
    Stop,
}

impl Action {
    pub const ALL: [Action; 4] = [
        Action::Forward,
        Action::LeftRotate,
        Action::RightRotate,
        Action::Stop,
    ];

    /// The wire token, e.g. `"LEFT ROTATE"`.
    pub fn token(self) -> &'static str {
        match self {
            Action::Forward => "FORWARD",
            Action::LeftRotate => "LEFT ROTATE",
            Action::RightRotate => "RIGHT ROTATE",
            Action::Stop => "STOP",
        }
    }

    /// Lenient parse for model replies: case-insensitive, `_` and runs of
    /// whitespace are treated as a single space. Still only four actions.
    pub fn parse_lenient(s: &str) -> Option<Action> {
        let normalized = s
            .trim()
            .replace('_', " ")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_ascii_uppercase();
        normalized.parse().ok()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown action token {0:?}")]
pub struct UnknownAction(pub String);

impl FromStr for Action {
    type Err = UnknownAction;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "FORWARD" => Ok(Action::Forward),
            "LEFT ROTATE" => Ok(Action::LeftRotate),
            "RIGHT ROTATE" => Ok(Action::RightRotate),
            "STOP" => Ok(Action::Stop),
            other => Err(UnknownAction(other.to_string())),
        }
    }
}

impl Serialize for Action {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.token())
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A run of one action over `[t_start, t_end)` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionInterval {
    pub action: Action,
    pub t_start: f64,
    pub t_end: f64,
}

impl ActionInterval {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start && t < self.t_end
    }
}

/// Which class of malformed annotation was encountered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnnotationErrorKind {
    Malformed,
    UnknownAction,
    Empty,
    Gap,
    Overlap,
    InvalidInterval,
    UnclusteredNeighbours,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnnotationError {
    #[error("malformed annotation document: {0}")]
    Malformed(String),
    #[error("interval {index}: unknown action token {token:?}")]
    UnknownAction { index: usize, token: String },
    #[error("empty interval list")]
    Empty,
    #[error("gap between interval {index} (ends {prev_end}) and the next (starts {next_start})")]
    Gap {
        index: usize,
        prev_end: f64,
        next_start: f64,
    },
    #[error("interval {index} (ends {prev_end}) overlaps the next (starts {next_start})")]
    Overlap {
        index: usize,
        prev_end: f64,
        next_start: f64,
    },
    #[error("interval {index}: invalid time range [{t_start}, {t_end}]")]
    InvalidInterval { index: usize, t_start: f64, t_end: f64 },
    #[error("intervals {index} and {} share action {action}; they should be clustered", index + 1)]
    UnclusteredNeighbours { index: usize, action: Action },
}

impl AnnotationError {
    pub fn kind(&self) -> AnnotationErrorKind {
        match self {
            AnnotationError::Malformed(_) => AnnotationErrorKind::Malformed,
            AnnotationError::UnknownAction { .. } => AnnotationErrorKind::UnknownAction,
            AnnotationError::Empty => AnnotationErrorKind::Empty,
            AnnotationError::Gap { .. } => AnnotationErrorKind::Gap,
            AnnotationError::Overlap { .. } => AnnotationErrorKind::Overlap,
            AnnotationError::InvalidInterval { .. } => AnnotationErrorKind::InvalidInterval,
            AnnotationError::UnclusteredNeighbours { .. } => {
                AnnotationErrorKind::UnclusteredNeighbours
            }
        }
    }
}

/// A validated, contiguous list of action intervals starting at t = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeAnnotation {
    intervals: Vec<ActionInterval>,
}

#[derive(Deserialize)]
struct RawInterval {
    action: String,
    #[serde(rename = "time range", alias = "time_range")]
    time_range: (f64, f64),
}

#[derive(Serialize)]
struct WireInterval<'a> {
    action: &'a str,
    #[serde(rename = "time range")]
    time_range: [f64; 2],
}

impl EpisodeAnnotation {
    /// Validates an interval list. The first interval must start at 0.
    pub fn new(intervals: Vec<ActionInterval>) -> Result<Self, AnnotationError> {
        if intervals.is_empty() {
            return Err(AnnotationError::Empty);
        }
        for (index, iv) in intervals.iter().enumerate() {
            let ok = iv.t_start.is_finite()
                && iv.t_end.is_finite()
                && iv.t_start >= 0.0
                && iv.t_start < iv.t_end;
            if !ok {
                return Err(AnnotationError::InvalidInterval {
                    index,
                    t_start: iv.t_start,
                    t_end: iv.t_end,
                });
            }
        }
        if intervals[0].t_start.abs() > TIME_EPSILON {
            return Err(AnnotationError::Gap {
                index: 0,
                prev_end: 0.0,
                next_start: intervals[0].t_start,
            });
        }
        for (index, pair) in intervals.windows(2).enumerate() {
            let (prev, next) = (&pair[0], &pair[1]);
            let delta = next.t_start - prev.t_end;
            if delta > TIME_EPSILON {
                return Err(AnnotationError::Gap {
                    index,
                    prev_end: prev.t_end,
                    next_start: next.t_start,
                });
            }
            if delta < -TIME_EPSILON {
                return Err(AnnotationError::Overlap {
                    index,
                    prev_end: prev.t_end,
                    next_start: next.t_start,
                });
            }
            if prev.action == next.action {
                return Err(AnnotationError::UnclusteredNeighbours {
                    index,
                    action: prev.action,
                });
            }
        }
        Ok(Self { intervals })
    }

    pub fn intervals(&self) -> &[ActionInterval] {
        &self.intervals
    }

    /// End time of the last interval.
    pub fn duration(&self) -> f64 {
        self.intervals.last().map(|iv| iv.t_end).unwrap_or(0.0)
    }

    /// The annotated action at playback time `t`, or `None` once the annotation has ended.
    pub fn action_at(&self, t: f64) -> Option<Action> {
        self.intervals
            .iter()
            .find(|iv| iv.contains(t))
            .map(|iv| iv.action)
    }

    /// True when the final interval is not STOP. Tolerated; the end of the
    /// annotation is treated as an implicit stop.
    pub fn has_trailing_non_stop(&self) -> bool {
        self.intervals
            .last()
            .map(|iv| iv.action != Action::Stop)
            .unwrap_or(false)
    }

    pub fn to_json_string(&self) -> String {
        let wire: Vec<WireInterval<'_>> = self
            .intervals
            .iter()
            .map(|iv| WireInterval {
                action: iv.action.token(),
                time_range: [iv.t_start, iv.t_end],
            })
            .collect();
        serde_json::to_string_pretty(&wire).expect("annotation serializes")
    }
}

/// Parses and validates an annotation document.
pub fn parse_annotation(document: &[u8]) -> Result<EpisodeAnnotation, AnnotationError> {
    let raw: Vec<RawInterval> =
        serde_json::from_slice(document).map_err(|e| AnnotationError::Malformed(e.to_string()))?;
    let mut intervals = Vec::with_capacity(raw.len());
    for (index, r) in raw.into_iter().enumerate() {
        let action = r
            .action
            .parse::<Action>()
            .map_err(|e| AnnotationError::UnknownAction { index, token: e.0 })?;
        intervals.push(ActionInterval {
            action,
            t_start: r.time_range.0,
            t_end: r.time_range.1,
        });
    }
    EpisodeAnnotation::new(intervals)
}

/// The six scene classes episodes are collected in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneClass {
    Farm,
    Greenhouse,
    Forest,
    Mountain,
    Garden,
    Village,
}

impl SceneClass {
    pub const ALL: [SceneClass; 6] = [
        SceneClass::Farm,
        SceneClass::Greenhouse,
        SceneClass::Forest,
        SceneClass::Mountain,
        SceneClass::Garden,
        SceneClass::Village,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SceneClass::Farm => "farm",
            SceneClass::Greenhouse => "greenhouse",
            SceneClass::Forest => "forest",
            SceneClass::Mountain => "mountain",
            SceneClass::Garden => "garden",
            SceneClass::Village => "village",
        }
    }
}

impl fmt::Display for SceneClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SceneClass {
    type Err = EpisodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SceneClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| EpisodeError::InvalidSceneClass(s.to_string()))
    }
}

/// Instruction text together with its whitespace word count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InstructionText {
    text: String,
    word_count: usize,
}

impl InstructionText {
    pub fn new(text: impl Into<String>) -> Result<Self, EpisodeError> {
        let text = text.into();
        let word_count = text.split_whitespace().count();
        if word_count == 0 {
            return Err(EpisodeError::EmptyInstruction);
        }
        Ok(Self { text, word_count })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameSourceKind {
    DirectoryOfImages,
    Null,
}

/// Where an episode's camera frames come from.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSourceRef {
    pub kind: FrameSourceKind,
    /// For `DirectoryOfImages` this is resolved against the manifest's directory.
    pub uri: String,
    pub nominal_fps: f64,
}

impl FrameSourceRef {
    pub fn null() -> Self {
        Self {
            kind: FrameSourceKind::Null,
            uri: String::new(),
            nominal_fps: 1.0,
        }
    }
}

/// A camera frame ready to be attached to a model request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePayload {
    pub media_type: String,
    pub bytes: Vec<u8>,
}

/// Resolves playback times to frame files. Frames are named by index
/// (`000042.jpg`, `42.png`, ...); time `t` maps to index `round(t * fps)`,
/// clamped to the last available frame.
#[derive(Debug, Clone)]
pub struct FrameReader {
    fps: f64,
    frames: BTreeMap<u64, PathBuf>,
}

impl FrameReader {
    pub fn open(source: &FrameSourceRef) -> Result<Option<Self>, EpisodeError> {
        if source.kind == FrameSourceKind::Null {
            return Ok(None);
        }
        let dir = Path::new(&source.uri);
        let entries = fs::read_dir(dir).map_err(|e| EpisodeError::Io {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut frames = BTreeMap::new();
        for entry in entries.flatten() {
            let path = entry.path();
            let index = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<u64>().ok());
            if let (Some(index), Some(_)) = (index, media_type_for(&path)) {
                frames.insert(index, path);
            }
        }
        Ok(Some(Self {
            fps: source.nominal_fps,
            frames,
        }))
    }

    pub fn frame_index(&self, t: f64) -> u64 {
        (t * self.fps).round().max(0.0) as u64
    }

    pub fn path_at(&self, t: f64) -> Option<&Path> {
        let index = self.frame_index(t);
        self.frames
            .range(..=index)
            .next_back()
            .or_else(|| self.frames.iter().next())
            .map(|(_, p)| p.as_path())
    }

    pub fn frame_at(&self, t: f64) -> Result<Option<ImagePayload>, EpisodeError> {
        let Some(path) = self.path_at(t) else {
            return Ok(None);
        };
        let bytes = fs::read(path).map_err(|e| EpisodeError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(Some(ImagePayload {
            media_type: media_type_for(path).unwrap_or("application/octet-stream").to_string(),
            bytes,
        }))
    }
}

fn media_type_for(path: &Path) -> Option<&'static str> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    match ext.as_str() {
        "jpg" | "jpeg" => Some("image/jpeg"),
        "png" => Some("image/png"),
        "webp" => Some("image/webp"),
        _ => None,
    }
}

/// Ground-truth boundary: subtask `ordinal` ends at `time` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubtaskBoundary {
    pub ordinal: u32,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub scene_class: SceneClass,
    pub instruction: InstructionText,
    pub annotation: EpisodeAnnotation,
    pub frame_source: FrameSourceRef,
    /// Only synthetic episodes carry these.
    pub subtask_boundaries: Option<Vec<SubtaskBoundary>>,
}

impl Episode {
    pub fn new(
        id: impl Into<String>,
        scene_class: SceneClass,
        instruction: InstructionText,
        annotation: EpisodeAnnotation,
        frame_source: FrameSourceRef,
        subtask_boundaries: Option<Vec<SubtaskBoundary>>,
    ) -> Result<Self, EpisodeError> {
        if let Some(bounds) = &subtask_boundaries {
            check_boundaries(bounds, annotation.duration())?;
        }
        Ok(Self {
            id: id.into(),
            scene_class,
            instruction,
            annotation,
            frame_source,
            subtask_boundaries,
        })
    }

    pub fn duration(&self) -> f64 {
        episode_duration(self)
    }

    /// Number of ground-truth subtasks, when boundaries are annotated.
    pub fn reference_subtask_count(&self) -> Option<usize> {
        self.subtask_boundaries.as_ref().map(Vec::len)
    }
}

fn check_boundaries(bounds: &[SubtaskBoundary], duration: f64) -> Result<(), EpisodeError> {
    let mut prev = f64::NEG_INFINITY;
    for (i, b) in bounds.iter().enumerate() {
        let expected = i as u32 + 1;
        if b.ordinal != expected {
            return Err(EpisodeError::InvalidBoundaries(format!(
                "boundary {i} has ordinal {}, expected {expected}",
                b.ordinal
            )));
        }
        if b.time.is_nan() || b.time <= prev {
            return Err(EpisodeError::InvalidBoundaries(format!(
                "boundary times must be strictly increasing (ordinal {})",
                b.ordinal
            )));
        }
        if b.time < 0.0 || b.time > duration + TIME_EPSILON {
            return Err(EpisodeError::InvalidBoundaries(format!(
                "boundary {} at {}s lies outside the episode (duration {duration}s)",
                b.ordinal, b.time
            )));
        }
        prev = b.time;
    }
    Ok(())
}

pub fn episode_duration(episode: &Episode) -> f64 {
    episode.annotation.duration()
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("invalid scene class {0:?}")]
    InvalidSceneClass(String),
    #[error("instruction text is empty")]
    EmptyInstruction,
    #[error("invalid frame rate {0}")]
    InvalidFrameRate(f64),
    #[error("frame directory {0} does not exist")]
    MissingFrames(PathBuf),
    #[error("invalid subtask boundaries: {0}")]
    InvalidBoundaries(String),
    #[error("annotation {path}: {source}")]
    Annotation {
        path: PathBuf,
        #[source]
        source: AnnotationError,
    },
}

/// On-disk manifest shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeManifest {
    pub id: String,
    pub scene_class: String,
    pub instruction: String,
    pub annotation_path: String,
    pub frames: FramesEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtask_boundaries: Option<Vec<(u32, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramesEntry {
    pub kind: FrameSourceKind,
    #[serde(default)]
    pub uri: String,
    pub fps: f64,
}

impl EpisodeManifest {
    /// Builds the manifest for `episode`, pointing at `annotation_path`.
    pub fn for_episode(episode: &Episode, annotation_path: impl Into<String>) -> Self {
        Self {
            id: episode.id.clone(),
            scene_class: episode.scene_class.as_str().to_string(),
            instruction: episode.instruction.text().to_string(),
            annotation_path: annotation_path.into(),
            frames: FramesEntry {
                kind: episode.frame_source.kind,
                uri: episode.frame_source.uri.clone(),
                fps: episode.frame_source.nominal_fps,
            },
            subtask_boundaries: episode
                .subtask_boundaries
                .as_ref()
                .map(|b| b.iter().map(|b| (b.ordinal, b.time)).collect()),
        }
    }
}

/// Loads and validates an episode from its manifest. Relative paths are
/// resolved against the manifest's directory.
pub fn load_episode(manifest_path: &Path) -> Result<Episode, EpisodeError> {
    let io_err = |path: &Path, e: std::io::Error| EpisodeError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let bytes = fs::read(manifest_path).map_err(|e| io_err(manifest_path, e))?;
    let manifest: EpisodeManifest =
        serde_json::from_slice(&bytes).map_err(|e| EpisodeError::Manifest {
            path: manifest_path.to_path_buf(),
            message: e.to_string(),
        })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let scene_class: SceneClass = manifest.scene_class.parse()?;
    let instruction = InstructionText::new(manifest.instruction)?;

    let annotation_path = base.join(&manifest.annotation_path);
    let doc = fs::read(&annotation_path).map_err(|e| io_err(&annotation_path, e))?;
    let annotation = parse_annotation(&doc).map_err(|source| EpisodeError::Annotation {
        path: annotation_path.clone(),
        source,
    })?;

    if !(manifest.frames.fps.is_finite() && manifest.frames.fps > 0.0) {
        return Err(EpisodeError::InvalidFrameRate(manifest.frames.fps));
    }
    let frame_source = match manifest.frames.kind {
        FrameSourceKind::Null => FrameSourceRef {
            kind: FrameSourceKind::Null,
            uri: manifest.frames.uri,
            nominal_fps: manifest.frames.fps,
        },
        FrameSourceKind::DirectoryOfImages => {
            let dir = base.join(&manifest.frames.uri);
            if !dir.is_dir() {
                return Err(EpisodeError::MissingFrames(dir));
            }
            FrameSourceRef {
                kind: FrameSourceKind::DirectoryOfImages,
                uri: dir.to_string_lossy().into_owned(),
                nominal_fps: manifest.frames.fps,
            }
        }
    };

    let boundaries = manifest.subtask_boundaries.map(|b| {
        b.into_iter()
            .map(|(ordinal, time)| SubtaskBoundary { ordinal, time })
            .collect()
    });
    Episode::new(
        manifest.id,
        scene_class,
        instruction,
        annotation,
        frame_source,
        boundaries,
    )
}
