//! Batch experiment driver for the uqdyn surrogate models.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod report;

use std::path::{Path, PathBuf};

pub use config::{ExperimentConfig, ResolvedConfig};
pub use error::HarnessError;
pub use experiment::{run_experiment, Metrics, RunOutcome};

/// Command-line overrides of a configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Reads, resolves and validates a configuration file; returns the
/// resolved configuration and the output directory.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<(ResolvedConfig, PathBuf), HarnessError> {
    let (mut raw, text) = ExperimentConfig::from_file(path)?;
    if let Some(s) = overrides.seed {
        raw.seed = s;
    }
    let resolved = raw.resolve(Some(&text))?;
    let out = overrides.out.clone().or(raw.output_dir).unwrap_or_else(|| PathBuf::from("out"));
    Ok((resolved, out))
}
