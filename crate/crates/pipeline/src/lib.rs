//! End-to-end workflow on top of `cfos-core`: a staged, resumable pipeline,
//! the experiment harness, the review loop and its HTTP service, and a
//! synthetic corpus generator with exact ground truth.

pub mod config;
pub mod error;
pub mod experiments;
pub mod iterate;
pub mod run;
pub mod service;
pub mod synth;

pub use config::{derive_seed, LabelSource, PipelineConfig};
pub use error::{PipelineError, Result};
pub use run::{run_pipeline, RunManifest, RunOptions, RunOutcome, Stage};
