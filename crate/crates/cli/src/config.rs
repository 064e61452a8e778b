//! TOML experiment configuration. Every key is required so that a run is
//! fully described by its file; `gimforge default-config` prints a complete
//! starting point.

use std::fmt;
use std::path::Path;

use gimforge::experiment::ExperimentConfig;
use sha2::{Digest, Sha256};

/// A configuration problem: missing or unknown key, wrong type or value.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
    check_values(&cfg)?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
}

fn check_values(cfg: &ExperimentConfig) -> Result<(), ConfigError> {
    let bad = |key: &str, why: &str| Err(ConfigError(format!("key `{key}`: {why}")));
    if cfg.graph.d == 0 {
        return bad("graph.d", "must be >= 1");
    }
    if cfg.features.n_components == 0 {
        return bad("features.n_components", "must be >= 1");
    }
    if cfg.hyper.mc_samples == 0 {
        return bad("hyper.mc_samples", "must be >= 1");
    }
    if !(cfg.hyper.tau > 0.0) {
        return bad("hyper.tau", "must be positive");
    }
    if !(cfg.train.lr > 0.0) {
        return bad("train.lr", "must be positive");
    }
    if !(cfg.train.mu0 > 0.0) {
        return bad("train.mu0", "must be positive");
    }
    if cfg.train.check_every == 0 {
        return bad("train.check_every", "must be >= 1");
    }
    if cfg.train.convergence_window == 0 {
        return bad("train.convergence_window", "must be >= 1");
    }
    if cfg.data.target_sizes.is_empty() || cfg.data.target_sizes.iter().any(|&s| s == 0 || s > cfg.graph.d) {
        return bad("data.target_sizes", "sizes must lie in 1..=d");
    }
    if !(cfg.eval.sinkhorn.eps > 0.0) {
        return bad("eval.sinkhorn.eps", "must be positive");
    }
    Ok(())
}

pub fn to_toml(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("configuration serializes")
}

/// SHA-256 of the normalized configuration, so formatting and key order do
/// not change the hash.
pub fn hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(to_toml(cfg).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
