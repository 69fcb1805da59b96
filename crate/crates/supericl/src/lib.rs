//! SuperICL experiment harness.
//!
//! Combines a small classifier's (label, confidence) predictions with
//! few-shot prompts for a black-box completion model, then scores and
//! analyses the result. The pure pieces live in `supericl-core`; this crate
//! adds data files, HTTP adapters, the response cache, retries, the runner
//! and report output.

pub mod cache;
pub mod config;
pub mod data;
pub mod error;
pub mod http;
pub mod report;
pub mod retry;
pub mod runner;

pub use config::{AdapterSpec, BackendSpec, ExperimentConfig, Mode, PluginSpec};
pub use error::{HarnessError, Result};
pub use runner::{run_experiment, Experiment, RunArtifact, RunFailure, RunParams};
pub use supericl_core as core;
