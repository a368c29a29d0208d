//! Command implementations behind the `dsrl` binary.
//!
//! Every command writes into one output directory and drops a copy of the
//! resolved configuration (`config.toml`, stamped with the toolkit version)
//! next to its results.

use std::fs;
use std::path::{Path, PathBuf};

use dsrl_core::config::RunConfig;
use dsrl_core::DsrlError;
use thiserror::Error;

mod compare;
mod eval;
mod train;

pub use compare::{aggregate, cmd_compare, CompareArgs, ReturnRow};
pub use eval::{cmd_eval, EvalArgs, EvalNoise, EvalRecord};
pub use train::{cmd_baseline, cmd_train, RunArgs, RunSummary};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] DsrlError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }

    /// 2 for configuration and load errors, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(DsrlError::Config { .. } | DsrlError::Shape(_) | DsrlError::Parse(_)) => 2,
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const CONFIG_COPY: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(format!("creating {}", path.display()), e))
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))
}

/// Writes `config.toml` with a version header into `dir`.
pub fn write_config_copy(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    let mut text = format!(
        "# {}\n# Resolved configuration. Geometry, noise and learning defaults are toolkit choices.\n",
        dsrl_core::VERSION
    );
    text.push_str(&cfg.to_toml_string()?);
    write_file(&dir.join(CONFIG_COPY), text.as_bytes())
}

/// Loads a run configuration and applies command-line overrides.
pub fn load_config(path: &Path, seed: Option<u64>, out: Option<&PathBuf>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.output_dir = out.display().to_string();
    }
    Ok(cfg)
}
