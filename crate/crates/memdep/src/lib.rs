//! Files, service and experiment plumbing around `memdep_core`: the
//! trajectory file format, checkpoints, heatmap export, frame rendering,
//! the annotation HTTP API and the train/evaluate pipelines used by the
//! `memdep` binary.

pub mod api;
pub mod checkpoint;
pub mod experiments;
pub mod heatmap;
pub mod io;
pub mod render;
