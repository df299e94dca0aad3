//! Batch analysis front end: configuration, synthetic data, the end-to-end
//! pipeline, tables and figures.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod render;
pub mod synth;
pub mod tables;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use pipeline::{run_pipeline, RunOptions, RunReport, Stages, Summary};
pub use synth::{generate_synthetic, SynthSpec};
