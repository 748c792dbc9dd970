//! Configuration, orchestration, persistence, synthetic projects and the
//! stability report.

pub mod config;
pub mod output;
pub mod pipeline;
pub mod stability;
pub mod synth;

pub use config::{ProjectConfig, RunConfig};
pub use output::{atomic_write, Manifest, OutputDir};
pub use pipeline::{run_pipeline, RunOptions, Stage};
pub use stability::{stability_report, StabilityReport, StabilityRow};
pub use synth::{generate_synthetic, materialize_git, OracleDefect, RepoMode, SyntheticProject, SyntheticSpec, Truth};
