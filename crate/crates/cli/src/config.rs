use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use ufin::data::SynthConfig;
use ufin::model::ModelConfig;
use ufin::prompting::PromptTemplate;
use ufin::training::{TeacherConfig, TrainConfig};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Prepared dataset root (`schema.json`, `domain_<k>/`, `prompts.json`).
    pub data: PathBuf,
    /// UFEC embedding cache.
    pub cache: PathBuf,
    /// Directory of `teacher_<k>.ufnp` checkpoints.
    pub teachers: PathBuf,
    /// Student checkpoint; metadata goes next to it as `.json`.
    pub model: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "data".into(),
            cache: "cache/embeddings.ufec".into(),
            teachers: "teachers".into(),
            model: "model/ufin.ufnp".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Hash,
    Cache,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub backend: Backend,
    /// Hash encoder seed.
    pub hash_seed: u64,
}

/// Everything a pipeline run needs. Loaded from TOML; command-line flags
/// override individual keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub teacher: TeacherConfig,
    pub teacher_train: TrainConfig,
    pub prompt: PromptTemplate,
    pub encoder: EncoderConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            paths: Paths::default(),
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            teacher: TeacherConfig::default(),
            teacher_train: TrainConfig {
                distill: false,
                ..TrainConfig::default()
            },
            prompt: PromptTemplate::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| UsageError(e.to_string()).into())
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_unknown_keys_fail() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml().unwrap()).unwrap(), c);
        let partial = RunConfig::parse("seed = 7\n[model]\nd_v = 32\n").unwrap();
        assert_eq!((partial.seed, partial.model.d_v), (7, 32));
        assert_eq!(partial.train, TrainConfig::default());
        let err = RunConfig::parse("[model]\nwidth = 3\n").unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        assert!(err.to_string().contains("width"));
    }
}
