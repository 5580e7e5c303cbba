//! Configuration-driven experiment runner for `memflow-core`.
// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::{Path, PathBuf};

pub use memflow_core as core;

use crate::commands::{run_command, Context};
use crate::config::Config;
use crate::error::RunError;
use crate::output::Artifacts;

/// Invocation settings shared by every command.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    /// Overrides the configuration's seed.
    pub seed: Option<u64>,
    /// Worker threads; `None` lets rayon decide.
    pub threads: Option<usize>,
    /// Multiplies every numeric tolerance.
    pub tolerance_scale: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { seed: None, threads: None, tolerance_scale: 1.0 }
    }
}

/// Result of one command: its artifacts, config hash and output directory.
#[derive(Debug)]
pub struct Outcome {
    pub artifacts: Artifacts,
    pub hash: String,
    pub dir: Option<PathBuf>,
}

/// Runs `command` on a loaded configuration without writing anything.
pub fn execute(command: &str, config: &Config, opts: &RunOptions) -> Result<(Artifacts, String), RunError> {
    if !(opts.tolerance_scale > 0.0 && opts.tolerance_scale.is_finite()) {
        return Err(error::ConfigError::Field { path: "--tolerance-scale".into(), message: "must be positive".into() }.into());
    }
    let seed = opts.seed.or(config.seed).unwrap_or(0);
    let ctx = Context { config, seed, tolerance_scale: opts.tolerance_scale };
    let hash = config.hash(seed, opts.tolerance_scale);
    let work = || run_command(command, &ctx);
    let artifacts = match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| RunError::Io(e.to_string()))?.install(work)?,
        None => work()?,
    };
    Ok((artifacts, hash))
}

/// Loads the configuration, runs the command and writes its artifacts
/// under `out`.
pub fn run(command: &str, config_path: &Path, out: &Path, opts: &RunOptions) -> Result<Outcome, RunError> {
    let config = Config::load(config_path)?;
    let (artifacts, hash) = execute(command, &config, opts)?;
    let dir = output::write(out, &artifacts, &hash)?;
    Ok(Outcome { artifacts, hash, dir: Some(dir) })
}
