//! Run configuration: one structured file drives every command, and the
//! effective configuration is snapshotted verbatim into each manifest.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::aggregation::ExpertKind;
use crate::error::ConfigError;
use crate::evaluation::DatasetKind;
use crate::gateway::{ModelRouter, Role, DEFAULT_MAX_TOKENS};

/// Pipeline mode selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Msme,
    Vote,
    Integrated,
    Base,
    NoExpert,
}

impl std::str::FromStr for RunMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "msme" => Ok(RunMode::Msme),
            "vote" => Ok(RunMode::Vote),
            "integrated" => Ok(RunMode::Integrated),
            "base" => Ok(RunMode::Base),
            "no_expert" | "no-expert" | "noexpert" => Ok(RunMode::NoExpert),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Prompt language policy. `Auto` follows each sample's detected
/// language; the zh templates are experimental mirrors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptLang {
    En,
    Zh,
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub kind: DatasetKind,
    /// Sidecar with per-target background/labels; defaults to a
    /// `targets.json` next to the dataset when present.
    pub targets_sidecar: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            path: PathBuf::from("dataset.jsonl"),
            kind: DatasetKind::Sem16,
            targets_sidecar: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub mode: RunMode,
    /// Enabled experts for msme/vote modes. The empty mask is the
    /// no-expert ablation row.
    pub mask: BTreeSet<ExpertKind>,
    pub runs: u32,
    pub parallelism: usize,
    pub out_dir: PathBuf,
    pub knowledge_dir: PathBuf,
    pub prompt_dir: Option<PathBuf>,
    pub prompt_lang: PromptLang,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            mode: RunMode::Msme,
            mask: ExpertKind::ALL.into_iter().collect(),
            runs: 1,
            parallelism: 1,
            out_dir: PathBuf::from("runs"),
            knowledge_dir: PathBuf::from("knowledge"),
            prompt_dir: None,
            prompt_lang: PromptLang::En,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub top_k: usize,
    pub timeout_s: u64,
    pub chunk_size: usize,
    pub overlap: usize,
    pub dedup_threshold: f64,
    /// Use sidecar-provided background instead of retrieval.
    pub provided_background: bool,
    pub fixtures_dir: Option<PathBuf>,
    pub search_endpoint: Option<String>,
    pub search_api_key_env: String,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            top_k: 3,
            timeout_s: 10,
            chunk_size: 300,
            overlap: 30,
            dedup_threshold: 0.85,
            provided_background: false,
            fixtures_dir: None,
            search_endpoint: None,
            search_api_key_env: "MSME_SEARCH_API_KEY".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub enabled: bool,
    /// JSON array of distractor texts. Without it, distractors come
    /// from the other targets' prepared chunks.
    pub distractors: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub cache_dir: PathBuf,
    /// Forbid live backends entirely; replay from cache only.
    pub offline: bool,
    pub chat_endpoint: Option<String>,
    pub api_key_env: String,
    pub timeout_s: u64,
    pub retry_pause_ms: u64,
    pub max_tokens: u32,
    pub lang_threshold: f64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            cache_dir: PathBuf::from("cache"),
            offline: false,
            chat_endpoint: None,
            api_key_env: "MSME_API_KEY".to_string(),
            timeout_s: 60,
            retry_pause_ms: 500,
            max_tokens: DEFAULT_MAX_TOKENS,
            lang_threshold: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub default: String,
    pub esl: Option<String>,
    pub knowledge_expert: Option<String>,
    pub label_expert: Option<String>,
    pub pragmatic_expert: Option<String>,
    pub meta_judge: Option<String>,
    /// Exactly three voter models for rhetoric detection.
    pub rhetoric_voters: Vec<String>,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            default: "gpt-3.5-turbo".to_string(),
            esl: None,
            knowledge_expert: None,
            label_expert: None,
            pragmatic_expert: None,
            meta_judge: None,
            rhetoric_voters: vec![
                "gpt-4o".to_string(),
                "qwq-32b".to_string(),
                "deepseek-r1".to_string(),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// `hash` (deterministic, offline) or `http`.
    pub provider: EmbeddingProviderKind,
    pub endpoint: Option<String>,
    pub model_en: String,
    pub model_zh: String,
    pub api_key_env: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingProviderKind {
    Hash,
    Http,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            provider: EmbeddingProviderKind::Hash,
            endpoint: None,
            model_en: "bge-base-en-v1.5".to_string(),
            model_zh: "bge-base-zh-v1.5".to_string(),
            api_key_env: "MSME_EMBED_API_KEY".to_string(),
        }
    }
}

/// The complete run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub run: RunSection,
    pub retrieval: RetrievalConfig,
    pub noise: NoiseConfig,
    pub gateway: GatewayConfig,
    pub models: ModelsConfig,
    pub embedding: EmbeddingConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let r = &self.retrieval;
        if !(r.dedup_threshold > 0.0 && r.dedup_threshold <= 1.0) {
            return Err(ConfigError(format!(
                "dedup_threshold must be in (0, 1], got {}",
                r.dedup_threshold
            )));
        }
        if !(self.gateway.lang_threshold > 0.0 && self.gateway.lang_threshold <= 1.0) {
            return Err(ConfigError(format!(
                "lang_threshold must be in (0, 1], got {}",
                self.gateway.lang_threshold
            )));
        }
        if r.chunk_size <= r.overlap {
            return Err(ConfigError(format!(
                "chunk_size ({}) must exceed overlap ({})",
                r.chunk_size, r.overlap
            )));
        }
        if r.top_k == 0 {
            return Err(ConfigError("top_k must be positive".to_string()));
        }
        if self.run.runs == 0 {
            return Err(ConfigError("runs must be positive".to_string()));
        }
        if self.run.parallelism == 0 {
            return Err(ConfigError("parallelism must be positive".to_string()));
        }
        if self.models.rhetoric_voters.len() != 3 {
            return Err(ConfigError(format!(
                "rhetoric_voters must list exactly 3 models, got {}",
                self.models.rhetoric_voters.len()
            )));
        }
        if self.models.default.trim().is_empty() {
            return Err(ConfigError("models.default must be non-empty".to_string()));
        }
        if self.gateway.offline && self.gateway.chat_endpoint.is_some() {
            return Err(ConfigError(
                "offline mode forbids a chat endpoint".to_string(),
            ));
        }
        Ok(())
    }

    /// The model routing implied by this configuration.
    pub fn router(&self) -> ModelRouter {
        let m = &self.models;
        let mut router = ModelRouter::new(&m.default)
            .with_voters(m.rhetoric_voters.clone())
            .with_max_tokens(self.gateway.max_tokens);
        for (role, model) in [
            (Role::Esl, &m.esl),
            (Role::KnowledgeExpert, &m.knowledge_expert),
            (Role::LabelExpert, &m.label_expert),
            (Role::PragmaticExpert, &m.pragmatic_expert),
            (Role::MetaJudge, &m.meta_judge),
        ] {
            if let Some(model) = model {
                router = router.with_role(role, model);
            }
        }
        router
    }

    /// Default sidecar path: explicit config, else `targets.json`
    /// beside the dataset when that file exists.
    pub fn sidecar_path(&self) -> Option<PathBuf> {
        if let Some(p) = &self.dataset.targets_sidecar {
            return Some(p.clone());
        }
        let implicit = self.dataset.path.parent()?.join("targets.json");
        implicit.is_file().then_some(implicit)
    }
}
