//! Declarative run configuration. Every key has a default; provider
//! secrets come from environment variables named in the config.

use std::path::Path;

use serde::{Deserialize, Serialize};
use skillmux_core::corpus::{FieldCaps, InputFormat};
use skillmux_core::dense::{AnnConfig, NormPolicy};
use skillmux_core::forge::{FilterThresholds, GroupConfig, NegativeMix};
use skillmux_core::objectives::Temperature;
use skillmux_core::sparse::Bm25Params;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("missing config key `{0}`")]
    Missing(String),
    #[error("missing config keys: {}", .0.iter().map(|k| format!("`{k}`")).collect::<Vec<_>>().join(", "))]
    MissingMany(Vec<String>),
    #[error("environment variable `{0}` is not set")]
    Env(String),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapsConfig {
    pub query_chars: usize,
    pub description_chars: usize,
    pub body_chars: usize,
}

impl From<FieldCaps> for CapsConfig {
    fn from(c: FieldCaps) -> Self {
        Self {
            query_chars: c.query_chars,
            description_chars: c.description_chars,
            body_chars: c.body_chars,
        }
    }
}

impl CapsConfig {
    pub fn caps(&self, key: &str) -> Result<FieldCaps, ConfigError> {
        FieldCaps::new(self.query_chars, self.description_chars, self.body_chars).map_err(|e| ConfigError::Invalid {
            key: key.to_string(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Caps {
    pub encoder: CapsConfig,
    pub reranker: CapsConfig,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            encoder: FieldCaps::ENCODER.into(),
            reranker: FieldCaps::RERANKER.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Candidates passed to the reranker.
    pub k: usize,
    /// `full` or `nd`.
    pub format: String,
    pub query_instruction: String,
    pub norm_tolerance: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 20,
            format: "full".into(),
            query_instruction: skillmux_core::dense::QueryInstruction::default().instruction_text,
            norm_tolerance: NormPolicy::default().tolerance,
        }
    }
}

impl RetrievalConfig {
    pub fn input_format(&self) -> Result<InputFormat, ConfigError> {
        self.format.parse().map_err(|e: String| ConfigError::Invalid {
            key: "retrieval.format".into(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeConfig {
    pub semantic: usize,
    pub lexical: usize,
    pub taxonomy: usize,
    pub random: usize,
    pub candidate_depth: usize,
    pub trigram_threshold: f64,
    pub cosine_threshold: f64,
    /// `word` or `char` shingles for the body-overlap layer.
    pub shingle: String,
    pub group_k: usize,
    pub group_overfetch: usize,
    pub qc_max_attempts: usize,
    pub dedup_neighbours: usize,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        let mix = NegativeMix::default();
        let th = FilterThresholds::default();
        let g = GroupConfig::default();
        Self {
            semantic: mix.semantic,
            lexical: mix.lexical,
            taxonomy: mix.taxonomy,
            random: mix.random,
            candidate_depth: mix.candidate_depth,
            trigram_threshold: th.trigram,
            cosine_threshold: th.cosine,
            shingle: "word".into(),
            group_k: g.k,
            group_overfetch: g.overfetch,
            qc_max_attempts: 3,
            dedup_neighbours: 5,
        }
    }
}

impl ForgeConfig {
    pub fn mix(&self) -> NegativeMix {
        NegativeMix {
            semantic: self.semantic,
            lexical: self.lexical,
            taxonomy: self.taxonomy,
            random: self.random,
            candidate_depth: self.candidate_depth,
        }
    }

    pub fn thresholds(&self) -> Result<FilterThresholds, ConfigError> {
        Ok(FilterThresholds {
            trigram: self.trigram_threshold,
            cosine: self.cosine_threshold,
            shingle: self.shingle.parse().map_err(|message| ConfigError::Invalid {
                key: "forge.shingle".into(),
                message,
            })?,
        })
    }

    pub fn groups(&self) -> GroupConfig {
        GroupConfig {
            k: self.group_k,
            overfetch: self.group_overfetch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectivesConfig {
    pub encoder_temperature: f64,
    pub listwise_temperature: f64,
}

impl Default for ObjectivesConfig {
    fn default() -> Self {
        Self {
            encoder_temperature: Temperature::ENCODER.value(),
            listwise_temperature: Temperature::LISTWISE.value(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub warmup: usize,
    pub concurrency: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup: 5,
            concurrency: 4,
        }
    }
}

/// One HTTP provider. `endpoint` has no default and is required only when
/// the provider is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Embedding width; probed from the service when absent.
    pub dimension: Option<usize>,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: usize,
    pub batch_size: usize,
    pub in_flight: usize,
    pub temperature: f64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: None,
            dimension: None,
            api_key_env: None,
            timeout_secs: 60,
            max_retries: 2,
            batch_size: 32,
            in_flight: 4,
            temperature: 0.0,
        }
    }
}

impl ProviderConfig {
    fn chat_default() -> Self {
        Self {
            max_retries: 1,
            ..Self::default()
        }
    }

    pub fn api_key(&self) -> Result<Option<String>, ConfigError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| ConfigError::Env(var.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Providers {
    pub embedding: ProviderConfig,
    pub reranker: ProviderConfig,
    pub chat: ProviderConfig,
    /// Sampling temperature for query and distractor generation.
    pub generation_temperature: f64,
}

impl Default for Providers {
    fn default() -> Self {
        Self {
            embedding: ProviderConfig::default(),
            reranker: ProviderConfig::default(),
            chat: ProviderConfig::chat_default(),
            generation_temperature: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub caps: Caps,
    pub bm25: Bm25Params,
    pub retrieval: RetrievalConfig,
    pub ann: AnnConfig,
    pub forge: ForgeConfig,
    pub objectives: ObjectivesConfig,
    pub bench: BenchConfig,
    pub providers: Providers,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 13,
            caps: Caps::default(),
            bm25: Bm25Params::default(),
            retrieval: RetrievalConfig::default(),
            ann: AnnConfig::default(),
            forge: ForgeConfig::default(),
            objectives: ObjectivesConfig::default(),
            bench: BenchConfig::default(),
            providers: Providers::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.caps.encoder.caps("caps.encoder")?;
        self.caps.reranker.caps("caps.reranker")?;
        self.bm25.validate().map_err(|e| ConfigError::Invalid {
            key: "bm25".into(),
            message: e.to_string(),
        })?;
        self.retrieval.input_format()?;
        self.forge.thresholds()?;
        for (key, t) in [
            ("objectives.encoder_temperature", self.objectives.encoder_temperature),
            ("objectives.listwise_temperature", self.objectives.listwise_temperature),
        ] {
            Temperature::new(t).map_err(|e| ConfigError::Invalid {
                key: key.into(),
                message: e.to_string(),
            })?;
        }
        if self.retrieval.k == 0 {
            return Err(ConfigError::Invalid {
                key: "retrieval.k".into(),
                message: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Fails naming every absent key among `keys` (dotted paths).
    pub fn require(&self, keys: &[&str]) -> Result<(), ConfigError> {
        let missing: Vec<String> = keys
            .iter()
            .filter(|k| self.lookup(k).is_none())
            .map(|k| k.to_string())
            .collect();
        match missing.len() {
            0 => Ok(()),
            1 => Err(ConfigError::Missing(missing.into_iter().next().expect("one key"))),
            _ => Err(ConfigError::MissingMany(missing)),
        }
    }

    fn lookup(&self, key: &str) -> Option<String> {
        let value = serde_json::to_value(self).ok()?;
        let mut cur = &value;
        for part in key.split('.') {
            cur = cur.get(part)?;
        }
        match cur {
            serde_json::Value::Null => None,
            serde_json::Value::String(s) if s.is_empty() => None,
            other => Some(other.to_string()),
        }
    }

    pub fn encoder_caps(&self) -> FieldCaps {
        self.caps.encoder.caps("caps.encoder").expect("validated")
    }

    pub fn reranker_caps(&self) -> FieldCaps {
        self.caps.reranker.caps("caps.reranker").expect("validated")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}
