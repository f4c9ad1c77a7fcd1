//! The single configuration document that governs indexing, querying and evaluation.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::evaluator::EvalOptions;
use crate::gateway::{Gateway, MockConfig, ReasoningEffort, RemoteProfile, RemoteProvider};
use crate::indexer::{ChunkingConfig, IndexConfig};
use crate::navigator::NavigationConfig;
use crate::refiner::RefinerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderProfile {
    Mock(MockConfig),
    Remote(RemoteProfile),
}

impl Default for ProviderProfile {
    fn default() -> Self {
        ProviderProfile::Mock(MockConfig::default())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub seed: u64,
    /// Upper bound on concurrent provider calls.
    pub parallelism: usize,
    pub type_cap: usize,
    pub gate_threshold: f64,
    pub context_budget: usize,
    pub chunk_top_k: usize,
    pub elimination_batch: usize,
    pub skip_elimination: bool,
    pub reasoning_effort: ReasoningEffort,
    pub chunking: ChunkingConfig,
    pub navigation: NavigationConfig,
    pub evaluation: EvalOptions,
    pub provider: ProviderProfile,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let index = IndexConfig::default();
        let refiner = RefinerConfig::default();
        Self {
            seed: 0,
            parallelism: 8,
            type_cap: index.type_cap,
            gate_threshold: index.gate_threshold,
            context_budget: refiner.context_budget,
            chunk_top_k: refiner.chunk_top_k,
            elimination_batch: refiner.elimination_batch,
            skip_elimination: refiner.skip_elimination,
            reasoning_effort: ReasoningEffort::default(),
            chunking: index.chunking,
            navigation: NavigationConfig::default(),
            evaluation: EvalOptions::default(),
            provider: ProviderProfile::default(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gate_threshold) {
            return bad(format!("gate_threshold must lie in [0, 1] (got {})", self.gate_threshold));
        }
        if self.type_cap == 0 {
            return bad("type_cap must be at least 1".into());
        }
        self.chunking
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.navigation_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.refiner_config().validate().map_err(ConfigError::Invalid)?;
        self.evaluation.validate().map_err(ConfigError::Invalid)
    }

    pub fn index_config(&self) -> IndexConfig {
        IndexConfig {
            chunking: self.chunking,
            type_cap: self.type_cap,
            gate_threshold: self.gate_threshold,
        }
    }

    /// Navigation settings with the top-level seed applied.
    pub fn navigation_config(&self) -> NavigationConfig {
        NavigationConfig {
            seed: self.seed,
            ..self.navigation.clone()
        }
    }

    pub fn refiner_config(&self) -> RefinerConfig {
        RefinerConfig {
            chunk_top_k: self.chunk_top_k,
            context_budget: self.context_budget,
            elimination_batch: self.elimination_batch,
            skip_elimination: self.skip_elimination,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        crate::text::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Gateway for the configured provider. Remote profiles read `CODA_API_KEY`.
    pub fn gateway(&self) -> Gateway {
        let gw = match &self.provider {
            ProviderProfile::Mock(m) => Gateway::mock(m.clone()),
            ProviderProfile::Remote(r) => Gateway::new(Arc::new(RemoteProvider::from_env(r.clone()))),
        };
        gw.with_parallelism(self.parallelism)
            .with_reasoning_effort(self.reasoning_effort)
    }
}
