//! Experiment runner for the in-context regression library.

pub mod config;
pub mod presets;
pub mod record;

use std::fs::File;
use std::io::{BufWriter, Write};

pub use config::{ExperimentConfig, Flags, Preset};
pub use presets::{run, Outcome};
pub use record::{write_csv, RunRecord};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] icl_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// Resolves the configuration, runs the preset and writes its output.
/// Returns the process exit code.
pub fn execute(preset: Preset, flags: &Flags, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = ExperimentConfig::resolve(preset, flags)?;
    let file = match &cfg.output {
        Some(path) => Some(File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?),
        None => None,
    };
    let outcome = run(&cfg)?;
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    for line in &outcome.report {
        writeln!(stdout, "{line}").map_err(io)?;
    }
    let is_table = !matches!(preset, Preset::OracleMoments | Preset::OracleConvexity);
    if is_table {
        let res = match file {
            Some(f) => write_csv(&outcome.records, BufWriter::new(f)),
            None => write_csv(&outcome.records, &mut *stdout),
        };
        res.map_err(|e| CliError::Io(e.to_string()))?;
    }
    for f in &outcome.failures {
        writeln!(stderr, "FAILED {f}").map_err(io)?;
    }
    Ok(if outcome.failures.is_empty() { 0 } else { 1 })
}
