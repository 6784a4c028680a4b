//! Experiment runner for `dmac-core`: TOML configs, versioned checkpoints,
//! heatmaps, curves, reports and the staged pipeline behind the `dmac` CLI.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod heatmap;
pub mod logs;
pub mod pipeline;
pub mod report;

pub use config::ExperimentConfig;
pub use error::LabError;
pub use pipeline::{Lab, RunManifest, Stage, Victim};
