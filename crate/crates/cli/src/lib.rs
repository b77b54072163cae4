//! Experiment driver for graph-based activity regularization.

pub mod commands;
pub mod config;

use std::path::Path;

use anyhow::{Context, Result};

use config::ExperimentConfig;

/// Reads the optional config file, applies `GAR_SEED` and the `--set` overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = path
        .map(|p| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let env_seed = std::env::var("GAR_SEED").ok();
    Ok(ExperimentConfig::load(text.as_deref(), overrides, env_seed.as_deref())?)
}
