//! Run configuration: one TOML file, with dotted `key=value` overrides.
//!
//! ```toml
//! output_dir = "out"
//!
//! [corpus]
//! path = "corpus.jsonl"
//! format = "jsonl"          # or "text-directory"
//! sample_size = 100         # optional; the whole corpus when absent
//! seed = 0
//!
//! [templates]               # optional per-stage template files
//! summarize = "prompts/summarize.toml"
//!
//! [client]
//! backend = "replay"        # "http", "record" or "replay"
//! base_url = "http://localhost:8000"
//! model = "meta-llama/Llama-3.1-70B-Instruct"
//! parallelism = 32
//! cache_path = "cache.jsonl"
//! api_key_env = "GUIDEX_API_KEY"
//!
//! [pipeline]
//! keep_empty = false
//!
//! [grounding]
//! mode = "normalized"
//! ```
//!
//! Relative paths are resolved against the directory of the config file.
//! Secrets never live in the file: the API key is read from the environment
//! variable named by `client.api_key_env`.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::corpus::CorpusFormat;
use crate::llm_client::{GenerationParams, HttpConfig, DEFAULT_MODEL};
use crate::pipeline::{PipelineConfig, PromptTemplate, Stage, TemplateSet};
use crate::validator::{GroundingMode, GroundingPolicy};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid override `{0}`: expected key=value")]
    Override(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{what} not found: {path}")]
    MissingPath { what: String, path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
    #[serde(default)]
    pub sample_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::Jsonl
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatePaths {
    pub summarize: Option<PathBuf>,
    pub structure: Option<PathBuf>,
    pub guidelines: Option<PathBuf>,
    pub instances: Option<PathBuf>,
}

impl TemplatePaths {
    fn get(&self, stage: Stage) -> Option<&PathBuf> {
        match stage {
            Stage::Summarize => self.summarize.as_ref(),
            Stage::Structure => self.structure.as_ref(),
            Stage::Guidelines => self.guidelines.as_ref(),
            Stage::Instances => self.instances.as_ref(),
        }
    }

    fn get_mut(&mut self, stage: Stage) -> Option<&mut PathBuf> {
        match stage {
            Stage::Summarize => self.summarize.as_mut(),
            Stage::Structure => self.structure.as_mut(),
            Stage::Guidelines => self.guidelines.as_mut(),
            Stage::Instances => self.instances.as_mut(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Http,
    Record,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSection {
    pub backend: Backend,
    #[serde(default = "default_base_url")]
    pub base_url: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Required for `record` and `replay`.
    #[serde(default)]
    pub cache_path: Option<PathBuf>,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_base_url() -> String {
    "http://localhost:8000".into()
}
fn default_model() -> String {
    DEFAULT_MODEL.into()
}
fn default_temperature() -> f64 {
    GenerationParams::default().temperature
}
fn default_top_p() -> f64 {
    GenerationParams::default().top_p
}
fn default_max_new_tokens() -> u32 {
    GenerationParams::default().max_new_tokens
}
fn default_parallelism() -> usize {
    32
}
fn default_api_key_env() -> String {
    "GUIDEX_API_KEY".into()
}
fn default_timeout() -> u64 {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    #[serde(default)]
    pub keep_empty: bool,
    #[serde(default = "default_repairs")]
    pub max_repairs: usize,
    /// 0 disables truncation.
    #[serde(default = "default_max_words")]
    pub max_document_words: usize,
}

fn default_repairs() -> usize {
    2
}
fn default_max_words() -> usize {
    4000
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            keep_empty: false,
            max_repairs: default_repairs(),
            max_document_words: default_max_words(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusSection,
    #[serde(default)]
    pub templates: TemplatePaths,
    pub client: ClientSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub grounding: GroundingPolicy,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Turn `value` into a TOML value: booleans, integers, floats and quoted
/// strings are recognized; anything else is taken as a bare string.
fn override_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&probe) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(spec.into()))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(spec.into()));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(spec.into()))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), override_value(value.trim()));
    Ok(())
}

impl RunConfig {
    /// Parse TOML text, apply overrides, and resolve relative paths against
    /// `base_dir`.
    pub fn from_toml_str(
        text: &str,
        origin: &str,
        base_dir: &Path,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let parse_err = |message: String| ConfigError::Parse {
            path: origin.to_string(),
            message,
        };
        let mut table: toml::Table = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        config.resolve_paths(base_dir);
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, &path.display().to_string(), base, overrides)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus.path);
        fix(&mut self.output_dir);
        if let Some(p) = self.client.cache_path.as_mut() {
            fix(p);
        }
        for stage in Stage::ALL {
            if let Some(p) = self.templates.get_mut(stage) {
                fix(p);
            }
        }
    }

    fn check(&self) -> Result<(), ConfigError> {
        self.generation_params()
            .check()
            .map_err(|e| ConfigError::Invalid(format!("client: {e}")))?;
        if self.client.parallelism == 0 {
            return Err(ConfigError::Invalid("client.parallelism must be >= 1".into()));
        }
        if self.client.backend != Backend::Http && self.client.cache_path.is_none() {
            return Err(ConfigError::Invalid(
                "client.cache_path is required for the record and replay backends".into(),
            ));
        }
        if self.grounding.mode == GroundingMode::Exact
            && (self.grounding.case_fold || self.grounding.collapse_whitespace)
        {
            return Err(ConfigError::Invalid(
                "grounding: exact mode takes no normalization flags".into(),
            ));
        }
        Ok(())
    }

    /// Check that every input path exists.
    pub fn check_paths(&self) -> Result<(), ConfigError> {
        let need = |what: &str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(ConfigError::MissingPath {
                    what: what.to_string(),
                    path: p.display().to_string(),
                })
            }
        };
        need("corpus", &self.corpus.path)?;
        for stage in Stage::ALL {
            if let Some(p) = self.templates.get(stage) {
                need(&format!("{stage} template"), p)?;
            }
        }
        if self.client.backend == Backend::Replay {
            need(
                "replay cache",
                self.client.cache_path.as_deref().expect("checked on load"),
            )?;
        }
        Ok(())
    }

    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            temperature: self.client.temperature,
            top_p: self.client.top_p,
            max_new_tokens: self.client.max_new_tokens,
            model_name: self.client.model.clone(),
        }
    }

    pub fn pipeline_config(&self, generated_at: Option<u64>) -> PipelineConfig {
        PipelineConfig {
            params: self.generation_params(),
            policy: self.grounding,
            keep_empty: self.pipeline.keep_empty,
            max_repairs: self.pipeline.max_repairs,
            max_document_words: (self.pipeline.max_document_words > 0)
                .then_some(self.pipeline.max_document_words),
            generated_at,
        }
    }

    /// Built-in templates, replaced by any configured template files.
    pub fn template_set(&self) -> Result<TemplateSet, ConfigError> {
        let mut set = TemplateSet::builtin();
        for stage in Stage::ALL {
            if let Some(path) = self.templates.get(stage) {
                let t = PromptTemplate::load(path).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                if t.stage != stage {
                    return Err(ConfigError::Invalid(format!(
                        "{}: template is for the {} stage, configured as {stage}",
                        path.display(),
                        t.stage
                    )));
                }
                set.set(t);
            }
        }
        Ok(set)
    }

    /// HTTP settings, with the API key taken from the environment.
    pub fn http_config(&self) -> HttpConfig {
        let mut http = HttpConfig::new(self.client.base_url.clone());
        http.api_key = std::env::var(&self.client.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        http.timeout = Duration::from_secs(self.client.timeout_secs);
        http
    }
}
