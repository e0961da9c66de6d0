//! Standard-library companion to `condmom-core`: experiment configuration,
//! law files, JSON and CSV reports, report comparison, a parallel Monte
//! Carlo driver and the `condmom` binary.

pub mod compare;
pub mod config;
pub mod error;
pub mod law_io;
pub mod mc;
pub mod registry;
pub mod report;
pub mod tasks;

pub use condmom_core as core;
pub use error::{CliError, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION};

/// Resolves the configuration and runs its task.
pub fn run(cfg: &config::ExperimentConfig) -> error::Result<report::Report> {
    let design = config::resolve(cfg)?;
    tasks::run_task(cfg, &design)
}
