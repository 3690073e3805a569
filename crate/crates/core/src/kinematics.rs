//! Planar unicycle dead reckoning over the four-action space.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episode::{Action, EpisodeAnnotation};

/// Planar pose. Heading is kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub const ORIGIN: Pose = Pose {
        x: 0.0,
        y: 0.0,
        heading: 0.0,
    };

    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_heading(heading),
        }
    }

    /// Euclidean distance between positions; heading is ignored.
    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Maps any angle into `(-pi, pi]`; `-pi` itself maps to `+pi`.
pub fn normalize_heading(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(TAU);
    if wrapped > PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicsConfig {
    /// m/s
    pub forward_speed: f64,
    /// rad/s
    pub rotation_rate: f64,
    /// seconds between decisions
    pub decision_period: f64,
    /// metres
    pub success_threshold: f64,
    /// run budget as a multiple of the episode duration
    pub max_step_factor: f64,
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        Self {
            forward_speed: 0.5,
            rotation_rate: PI / 6.0,
            decision_period: 1.0,
            success_threshold: 3.0,
            max_step_factor: 2.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field} must be strictly positive and finite, got {value}")]
    NotPositive { field: &'static str, value: f64 },
    #[error("max_step_factor must exceed 1, got {0}")]
    StepFactor(f64),
    #[error("config document: {0}")]
    Parse(String),
}

impl KinematicsConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields = [
            ("forward_speed", self.forward_speed),
            ("rotation_rate", self.rotation_rate),
            ("decision_period", self.decision_period),
            ("success_threshold", self.success_threshold),
            ("max_step_factor", self.max_step_factor),
        ];
        for (field, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigError::NotPositive { field, value });
            }
        }
        if self.max_step_factor <= 1.0 {
            return Err(ConfigError::StepFactor(self.max_step_factor));
        }
        Ok(())
    }

    /// Parses a flat JSON object. Missing keys take their defaults.
    pub fn from_json(bytes: &[u8]) -> Result<Self, ConfigError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Partial {
            forward_speed: Option<f64>,
            rotation_rate: Option<f64>,
            decision_period: Option<f64>,
            success_threshold: Option<f64>,
            max_step_factor: Option<f64>,
        }
        let p: Partial =
            serde_json::from_slice(bytes).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let d = Self::default();
        let config = Self {
            forward_speed: p.forward_speed.unwrap_or(d.forward_speed),
            rotation_rate: p.rotation_rate.unwrap_or(d.rotation_rate),
            decision_period: p.decision_period.unwrap_or(d.decision_period),
            success_threshold: p.success_threshold.unwrap_or(d.success_threshold),
            max_step_factor: p.max_step_factor.unwrap_or(d.max_step_factor),
        };
        config.validate()?;
        Ok(config)
    }

    /// Decision budget for an episode of `duration` seconds: `ceil(T / period)`
    /// with `T = max_step_factor * duration`.
    pub fn max_decisions(&self, duration: f64) -> usize {
        let budget = self.max_step_factor * duration;
        // Guard against 24.000000000000004 style ratios landing one step high.
        ((budget / self.decision_period) - 1e-9).ceil().max(0.0) as usize
    }
}

/// Advances `pose` by applying `action` for `dt` seconds.
pub fn step_pose(pose: Pose, action: Action, dt: f64, config: &KinematicsConfig) -> Pose {
    match action {
        Action::Forward => {
            let d = config.forward_speed * dt;
            Pose {
                x: pose.x + d * pose.heading.cos(),
                y: pose.y + d * pose.heading.sin(),
                heading: pose.heading,
            }
        }
        Action::LeftRotate => Pose {
            heading: normalize_heading(pose.heading + config.rotation_rate * dt),
            ..pose
        },
        Action::RightRotate => Pose {
            heading: normalize_heading(pose.heading - config.rotation_rate * dt),
            ..pose
        },
        Action::Stop => pose,
    }
}

/// Time-indexed poses starting at `(0, Pose::ORIGIN)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    points: Vec<(f64, Pose)>,
}

impl Default for Trajectory {
    fn default() -> Self {
        Self::new()
    }
}

impl Trajectory {
    pub fn new() -> Self {
        Self {
            points: vec![(0.0, Pose::ORIGIN)],
        }
    }

    /// Appends a point; `time` must exceed the last recorded time.
    pub fn push(&mut self, time: f64, pose: Pose) {
        let last = self.points.last().map(|(t, _)| *t).unwrap_or(f64::NEG_INFINITY);
        assert!(time > last, "trajectory times must increase ({time} <= {last})");
        self.points.push((time, pose));
    }

    pub fn points(&self) -> &[(f64, Pose)] {
        &self.points
    }

    pub fn final_pose(&self) -> Pose {
        self.points.last().map(|(_, p)| *p).unwrap_or(Pose::ORIGIN)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Integrates the annotation at decision-period resolution. Each interval is
/// split into full periods plus one shorter remainder step.
pub fn ground_truth_trajectory(
    annotation: &EpisodeAnnotation,
    config: &KinematicsConfig,
) -> Trajectory {
    let mut trajectory = Trajectory::new();
    let mut pose = Pose::ORIGIN;
    for iv in annotation.intervals() {
        let steps = ((iv.duration() / config.decision_period) - 1e-9).ceil().max(1.0) as usize;
        for k in 0..steps {
            let t0 = iv.t_start + k as f64 * config.decision_period;
            let t1 = if k + 1 == steps {
                iv.t_end
            } else {
                iv.t_start + (k + 1) as f64 * config.decision_period
            };
            pose = step_pose(pose, iv.action, t1 - t0, config);
            trajectory.push(t1, pose);
        }
    }
    trajectory
}

/// Final pose of the ground-truth trajectory.
pub fn goal_pose(annotation: &EpisodeAnnotation, config: &KinematicsConfig) -> Pose {
    ground_truth_trajectory(annotation, config).final_pose()
}

/// Ground-truth pose at an arbitrary time, integrating each interval exactly
/// up to `t`. Times past the end return the final pose.
pub fn pose_at(annotation: &EpisodeAnnotation, t: f64, config: &KinematicsConfig) -> Pose {
    let mut pose = Pose::ORIGIN;
    for iv in annotation.intervals() {
        if t <= iv.t_start {
            break;
        }
        let end = iv.t_end.min(t);
        pose = step_pose(pose, iv.action, end - iv.t_start, config);
    }
    pose
}
