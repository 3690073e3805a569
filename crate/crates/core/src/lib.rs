//! Evaluation toolkit for instruction-following navigation agents.
//!
//! Episodes are recorded walks with action annotations. A policy watches the
//! recording, keeps a list of subtasks and issues actions; its own pose is
//! dead-reckoned and scored against the annotated trajectory.

pub mod dataset;
pub mod decompose;
pub mod episode;
pub mod kinematics;
pub mod metrics;
pub mod model;
pub mod policy;
pub mod runner;
pub mod subtask;
pub mod synth;
pub mod template;
