//! Success rate, navigation error and independent success rate.
//!
//! ISR is a ratio of means, `mean(sq) / mean(tq)`, over the episodes whose
//! subtask successes could be judged. It is not a mean of per-episode ratios.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episode::{Episode, SceneClass};
use crate::kinematics::{goal_pose, pose_at, KinematicsConfig, Pose};
use crate::policy::DecisionSource;
use crate::runner::{EpisodeRun, Termination};
use crate::subtask::StateTransition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: String,
    pub success: bool,
    /// metres
    pub ne: f64,
    /// Subtasks finished at the right place; `None` when not judgeable.
    pub sq: Option<u32>,
    pub tq: u32,
    pub scene_class: SceneClass,
    /// Ground-truth subtask count used for bucketing.
    pub subtask_count: u32,
    pub termination: Termination,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("run belongs to episode {run:?}, not {episode:?}")]
    EpisodeMismatch { run: String, episode: String },
    #[error("cannot aggregate an empty result set")]
    Empty,
    #[error("report CSV: {0}")]
    Csv(String),
}

/// Scores one finished run against its episode.
///
/// A subtask counts toward `sq` when its completion was accepted while the
/// agent stood within `success_threshold` of the ground-truth pose at that
/// subtask's boundary. This needs boundaries and a list of the same length;
/// otherwise `sq` is `None`.
pub fn score_episode(
    run: &EpisodeRun,
    episode: &Episode,
    config: &KinematicsConfig,
) -> Result<EpisodeResult, MetricsError> {
    if run.episode_id != episode.id {
        return Err(MetricsError::EpisodeMismatch {
            run: run.episode_id.clone(),
            episode: episode.id.clone(),
        });
    }
    let goal = goal_pose(&episode.annotation, config);
    let ne = run.final_pose().distance_to(&goal);
    let success = ne <= config.success_threshold && run.termination != Termination::Aborted;

    let reference = episode.reference_subtask_count();
    let tq = run
        .initial_subtasks
        .as_ref()
        .map(|l| l.len())
        .or(reference)
        .unwrap_or(1) as u32;

    let sq = match (&episode.subtask_boundaries, &run.initial_subtasks) {
        (Some(bounds), Some(list)) if bounds.len() == list.len() => {
            let mut before = Pose::ORIGIN;
            let mut count = 0u32;
            for record in &run.records {
                if record.source == DecisionSource::Policy && record.transition_accepted {
                    if let StateTransition::Complete(id) = record.decision.transition {
                        let boundary = bounds[(id - 1) as usize].time;
                        let expected = pose_at(&episode.annotation, boundary, config);
                        if before.distance_to(&expected) <= config.success_threshold {
                            count += 1;
                        }
                    }
                }
                before = record.agent_pose_after;
            }
            Some(count)
        }
        _ => None,
    };

    Ok(EpisodeResult {
        episode_id: episode.id.clone(),
        success,
        ne,
        sq,
        tq,
        scene_class: episode.scene_class,
        subtask_count: reference.unwrap_or(tq as usize) as u32,
        termination: run.termination,
    })
}

/// Ways of bucketing results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Scene,
    /// `=2`, `=3`, `>=4`
    Subtask,
    /// `=2`, `>=3`
    SubtaskCoarse,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Scene, Partition::Subtask, Partition::SubtaskCoarse];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Scene => "scene",
            Partition::Subtask => "subtask",
            Partition::SubtaskCoarse => "subtask_coarse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }

    /// Bucket key for a result.
    pub fn key(self, result: &EpisodeResult) -> String {
        let n = result.subtask_count;
        match self {
            Partition::Scene => format!("scene={}", result.scene_class),
            Partition::Subtask if n >= 4 => "subtask≥4".into(),
            Partition::SubtaskCoarse if n >= 3 => "subtask≥3".into(),
            Partition::Subtask | Partition::SubtaskCoarse => format!("subtask={n}"),
        }
    }

    /// Keys always rendered, even when empty.
    pub fn fixed_keys(self) -> Vec<String> {
        match self {
            Partition::Scene => SceneClass::ALL.iter().map(|s| format!("scene={s}")).collect(),
            Partition::Subtask => vec!["subtask=2".into(), "subtask=3".into(), "subtask≥4".into()],
            Partition::SubtaskCoarse => vec!["subtask=2".into(), "subtask≥3".into()],
        }
    }
}

/// Summary over a set of results. Every field but `n_episodes` is `None` for an empty set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_episodes: usize,
    pub sr: Option<f64>,
    pub ne_mean: Option<f64>,
    pub isr: Option<f64>,
    pub sq_mean: Option<f64>,
    pub tq_mean: Option<f64>,
    /// Episodes contributing to the ISR terms.
    pub n_isr_scored: usize,
}

/// Order-independent sum: values are added in sorted order.
fn stable_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

impl Aggregate {
    fn empty() -> Self {
        Self {
            n_episodes: 0,
            sr: None,
            ne_mean: None,
            isr: None,
            sq_mean: None,
            tq_mean: None,
            n_isr_scored: 0,
        }
    }

    pub fn of<'a>(results: impl IntoIterator<Item = &'a EpisodeResult>) -> Self {
        let results: Vec<&EpisodeResult> = results.into_iter().collect();
        let n = results.len();
        if n == 0 {
            return Self::empty();
        }
        let successes = results.iter().filter(|r| r.success).count();
        let mut nes: Vec<f64> = results.iter().map(|r| r.ne).collect();
        let scored: Vec<(u32, u32)> = results
            .iter()
            .filter_map(|r| r.sq.map(|sq| (sq, r.tq)))
            .collect();
        let (sq_mean, tq_mean, isr) = if scored.is_empty() {
            (None, None, None)
        } else {
            let k = scored.len() as f64;
            let sq: u64 = scored.iter().map(|(s, _)| *s as u64).sum();
            let tq: u64 = scored.iter().map(|(_, t)| *t as u64).sum();
            let sq_mean = sq as f64 / k;
            let tq_mean = tq as f64 / k;
            (Some(sq_mean), Some(tq_mean), Some(sq_mean / tq_mean))
        };
        Self {
            n_episodes: n,
            sr: Some(successes as f64 / n as f64),
            ne_mean: Some(stable_sum(&mut nes) / n as f64),
            isr,
            sq_mean,
            tq_mean,
            n_isr_scored: scored.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    #[serde(flatten)]
    pub overall: Aggregate,
    /// partition name -> bucket key -> aggregate
    pub buckets: BTreeMap<String, BTreeMap<String, Aggregate>>,
}

impl AggregateReport {
    pub fn bucket(&self, partition: Partition, key: &str) -> Option<&Aggregate> {
        self.buckets.get(partition.as_str())?.get(key)
    }
}

pub fn aggregate(
    results: &[EpisodeResult],
    partitions: &[Partition],
) -> Result<AggregateReport, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut buckets = BTreeMap::new();
    for &partition in partitions {
        let mut groups: BTreeMap<String, Vec<&EpisodeResult>> = partition
            .fixed_keys()
            .into_iter()
            .map(|k| (k, Vec::new()))
            .collect();
        for r in results {
            groups.entry(partition.key(r)).or_default().push(r);
        }
        let aggregates = groups
            .into_iter()
            .map(|(k, members)| (k, Aggregate::of(members)))
            .collect();
        buckets.insert(partition.as_str().to_string(), aggregates);
    }
    Ok(AggregateReport {
        overall: Aggregate::of(results),
        buckets,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    TableText,
    Csv,
    Structured,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "table" | "table_text" | "text" => Some(ReportFormat::TableText),
            "csv" => Some(ReportFormat::Csv),
            "json" | "structured" => Some(ReportFormat::Structured),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::TableText => "txt",
            ReportFormat::Csv => "csv",
            ReportFormat::Structured => "json",
        }
    }
}

fn cell2(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into())
}

/// The ISR cell as usually tabulated, `"sq_mean / tq_mean"`.
pub fn isr_cell(a: &Aggregate) -> String {
    match (a.sq_mean, a.tq_mean) {
        (Some(sq), Some(tq)) => format!("{sq:.2} / {tq:.2}"),
        _ => "-".into(),
    }
}

const CSV_HEADER: [&str; 9] = [
    "partition",
    "bucket",
    "n_episodes",
    "sr",
    "ne_mean",
    "isr",
    "sq_mean",
    "tq_mean",
    "n_isr_scored",
];

fn csv_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

fn rows(report: &AggregateReport) -> Vec<(&str, &str, &Aggregate)> {
    let mut rows = vec![("all", "all", &report.overall)];
    for (partition, buckets) in &report.buckets {
        for (key, agg) in buckets {
            rows.push((partition.as_str(), key.as_str(), agg));
        }
    }
    rows
}

pub fn render_report(report: &AggregateReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Structured => {
            let mut out = serde_json::to_vec_pretty(report).expect("report serializes");
            out.push(b'\n');
            out
        }
        ReportFormat::Csv => {
            let mut writer = csv::Writer::from_writer(Vec::new());
            writer.write_record(CSV_HEADER).expect("in-memory write");
            for (partition, key, a) in rows(report) {
                writer
                    .write_record([
                        partition.to_string(),
                        key.to_string(),
                        a.n_episodes.to_string(),
                        csv_num(a.sr),
                        csv_num(a.ne_mean),
                        csv_num(a.isr),
                        csv_num(a.sq_mean),
                        csv_num(a.tq_mean),
                        a.n_isr_scored.to_string(),
                    ])
                    .expect("in-memory write");
            }
            writer.into_inner().expect("in-memory flush")
        }
        ReportFormat::TableText => {
            let mut out = String::new();
            let _ = writeln!(
                out,
                "{:<16} {:<22} {:>6} {:>6} {:>7} {:>13}",
                "partition", "bucket", "n", "SR", "NE", "ISR"
            );
            for (partition, key, a) in rows(report) {
                let _ = writeln!(
                    out,
                    "{:<16} {:<22} {:>6} {:>6} {:>7} {:>13}",
                    partition,
                    key,
                    a.n_episodes,
                    cell2(a.sr),
                    cell2(a.ne_mean),
                    isr_cell(a)
                );
            }
            out.into_bytes()
        }
    }
}

/// Reads back a report written with [`ReportFormat::Csv`].
pub fn parse_report_csv(bytes: &[u8]) -> Result<AggregateReport, MetricsError> {
    let err = |e: String| MetricsError::Csv(e);
    let mut reader = csv::Reader::from_reader(bytes);
    let num = |s: &str| -> Result<Option<f64>, MetricsError> {
        if s == "-" {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| MetricsError::Csv(format!("{s:?}: {e}")))
        }
    };
    let mut overall = None;
    let mut buckets: BTreeMap<String, BTreeMap<String, Aggregate>> = BTreeMap::new();
    for record in reader.records() {
        let r = record.map_err(|e| err(e.to_string()))?;
        if r.len() != CSV_HEADER.len() {
            return Err(err(format!("expected {} columns, got {}", CSV_HEADER.len(), r.len())));
        }
        let agg = Aggregate {
            n_episodes: r[2].parse().map_err(|e| err(format!("n_episodes: {e}")))?,
            sr: num(&r[3])?,
            ne_mean: num(&r[4])?,
            isr: num(&r[5])?,
            sq_mean: num(&r[6])?,
            tq_mean: num(&r[7])?,
            n_isr_scored: r[8].parse().map_err(|e| err(format!("n_isr_scored: {e}")))?,
        };
        if &r[0] == "all" {
            overall = Some(agg);
        } else {
            buckets.entry(r[0].to_string()).or_default().insert(r[1].to_string(), agg);
        }
    }
    Ok(AggregateReport {
        overall: overall.ok_or_else(|| err("missing overall row".into()))?,
        buckets,
    })
}
