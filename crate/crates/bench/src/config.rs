//! The TOML config file and command-line overrides.
//!
//! ```toml
//! schema_version = 1
//!
//! [model]            # ModelConfig; missing fields take defaults
//! seed = 0
//!
//! [engine]           # EngineConfig; `beta` is set from the policy
//! local_window = 256
//!
//! [policy]
//! kind = "qllm"      # or "current-only", "local-only"
//! beta = 1.0
//!
//! [workload]
//! kind = "planted-needle"
//! context_length = 4096
//! needle_depth = 0.5
//! needle_alignment = 0.9
//! seed = 0
//! repetitions = 1
//! ```

use std::path::Path;

use qllm_core::engine::EngineConfig;
use qllm_core::model::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::experiment::PolicySpec;
use crate::workload::WorkloadSpec;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {0} (expected {CONFIG_SCHEMA_VERSION})")]
    Version(u32),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default)]
    pub workload: WorkloadSpec,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            model: ModelConfig::default(),
            engine: EngineConfig::default(),
            policy: PolicySpec::default(),
            workload: WorkloadSpec::default(),
        }
    }
}

/// Flag values that replace config fields when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub beta: Option<f64>,
    pub block_size: Option<usize>,
    pub num_blocks: Option<usize>,
    pub num_repr: Option<usize>,
    pub local_window: Option<usize>,
    pub chunk_size: Option<usize>,
    pub hot_capacity: Option<usize>,
    pub policy: Option<String>,
    pub seed: Option<u64>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text)?;
        if config.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(ConfigError::Version(config.schema_version));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Apply flag overrides, then validate.
    pub fn with_overrides(mut self, o: &Overrides) -> Result<Self, ConfigError> {
        if let Some(name) = &o.policy {
            self.policy = match name.as_str() {
                "qllm" => PolicySpec::Qllm { beta: self.policy_beta().unwrap_or(1.0) },
                "current-only" => PolicySpec::CurrentOnly,
                "local-only" => PolicySpec::LocalOnly,
                other => {
                    return Err(ConfigError::Invalid(format!(
                        "unknown policy {other:?} (expected qllm, current-only or local-only)"
                    )))
                }
            };
        }
        if let Some(beta) = o.beta {
            match &mut self.policy {
                PolicySpec::Qllm { beta: b } => *b = beta,
                other => {
                    return Err(ConfigError::Invalid(format!(
                        "--beta only applies to qllm, policy is {}",
                        other.name()
                    )))
                }
            }
        }
        let e = &mut self.engine;
        let set = |slot: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut e.block_size, o.block_size);
        set(&mut e.blocks_per_lookup, o.num_blocks);
        set(&mut e.representatives, o.num_repr);
        set(&mut e.local_window, o.local_window);
        set(&mut e.chunk_size, o.chunk_size);
        set(&mut e.hot_capacity_blocks, o.hot_capacity);
        if let Some(seed) = o.seed {
            self.workload.seed = seed;
        }
        self.validate()?;
        Ok(self)
    }

    fn policy_beta(&self) -> Option<f64> {
        match self.policy {
            PolicySpec::Qllm { beta } => Some(beta),
            _ => None,
        }
    }

    /// Engine config with the policy applied.
    pub fn effective_engine(&self) -> EngineConfig {
        self.policy.apply(self.engine)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.model.validate().map_err(|e| invalid(&e))?;
        self.effective_engine().validate().map_err(|e| invalid(&e))?;
        if self.engine.representatives > self.engine.block_size {
            return Err(ConfigError::Invalid(format!(
                "representatives {} exceed block_size {}",
                self.engine.representatives, self.engine.block_size
            )));
        }
        self.workload.validate().map_err(|e| invalid(&e))?;
        let pinned = self.workload.global_len + self.workload.query_len;
        if pinned > self.engine.n_init {
            return Err(ConfigError::Invalid(format!(
                "global_len + query_len = {pinned} exceeds n_init {}",
                self.engine.n_init
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_take_defaults() {
        let c = Config::from_toml("schema_version = 1\n[engine]\nlocal_window = 512\n").unwrap();
        assert_eq!(c.engine.local_window, 512);
        assert_eq!(c.engine.block_size, EngineConfig::default().block_size);
        assert_eq!(c.model, ModelConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let c = Config::default();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Config::from_toml("schema_version = 2"), Err(ConfigError::Version(2))));
        assert!(matches!(Config::from_toml("schema_version = 1\nfoo = 3"), Err(ConfigError::Parse(_))));
        assert!(Config::from_toml("schema_version = 1\n[policy]\nkind = \"qllm\"\nbeta = -1.0\n")
            .unwrap()
            .validate()
            .is_err());
    }

    #[test]
    fn overrides() {
        let o = Overrides { beta: Some(4.0), block_size: Some(32), seed: Some(9), ..Default::default() };
        let c = Config::default().with_overrides(&o).unwrap();
        assert_eq!(c.policy, PolicySpec::Qllm { beta: 4.0 });
        assert_eq!(c.effective_engine().beta, 4.0);
        assert_eq!((c.engine.block_size, c.workload.seed), (32, 9));

        let o = Overrides { policy: Some("local-only".into()), ..Default::default() };
        assert_eq!(Config::default().with_overrides(&o).unwrap().effective_engine().blocks_per_lookup, 0);
        let o = Overrides { policy: Some("local-only".into()), beta: Some(1.0), ..Default::default() };
        assert!(Config::default().with_overrides(&o).is_err());
        let o = Overrides { policy: Some("nope".into()), ..Default::default() };
        assert!(Config::default().with_overrides(&o).is_err());
        let o = Overrides { chunk_size: Some(10_000), ..Default::default() };
        assert!(Config::default().with_overrides(&o).is_err());
    }
}
