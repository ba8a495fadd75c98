//! Pipeline orchestration for the `splatslide` command.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod logging;
pub mod manifest;
pub mod scenario;
pub mod stages;

use thiserror::Error;

pub use config::PipelineConfig;
pub use stages::{cmd_fill, cmd_ingest_poses, cmd_regularize, cmd_render, cmd_run, cmd_simulate, Pipeline, RunOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    /// Bad input data detected by a stage.
    #[error("{stage}: {message}")]
    Input { stage: &'static str, message: String },
    #[error("{stage}: {message}")]
    Runtime { stage: &'static str, message: String },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Input { .. } => EXIT_INVALID,
            Self::Runtime { .. } => EXIT_RUNTIME,
        }
    }
}
