//! Experiment configuration files (TOML).
//!
//! One file lists datasets, backends, an optional embedder, shared run
//! defaults, and `[[runs]]` override blocks; every run executes against
//! every dataset and backend it names.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DatasetFormat;
use crate::eval::Method;
use crate::fewshot::SelectionMethod;
use crate::output::OutputMethod;
use crate::prompt::PromptTemplate;
use crate::strategy::{check_compatible, StrategyConfig, ToTParams, DEFAULT_MAX_CHARS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("config serialization failed: {0}")]
    Serialize(String),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

fn default_k() -> usize {
    5
}

fn default_seed() -> u64 {
    42
}

fn default_cache() -> PathBuf {
    PathBuf::from("cache")
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k_folds: usize,
    #[serde(default = "default_cache")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Directory of template overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
    pub datasets: Vec<DatasetConfig>,
    #[serde(default)]
    pub backends: Vec<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<EmbedderConfig>,
    #[serde(default)]
    pub defaults: RunConfig,
    #[serde(default)]
    pub runs: Vec<RunConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub path: PathBuf,
    pub topic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<DatasetFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Openai,
}

fn yes() -> bool {
    true
}

fn default_concurrency() -> usize {
    4
}

fn default_timeout() -> u64 {
    120
}

fn default_top_logprobs() -> u32 {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub name: String,
    pub kind: BackendKind,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    /// Whether the server reports first-token log probabilities.
    #[serde(default = "yes")]
    pub logprobs: bool,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
    #[serde(default = "yes")]
    pub system_messages: bool,
    #[serde(default = "yes")]
    pub prefill: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Openai,
    Hashing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Base,
    Chunking,
    Cot1,
    Cot2,
    Tot,
    NaiveBayes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKind {
    Random,
    Knn,
    KnnBalanced,
}

/// One run's settings. `[defaults]` and each `[[runs]]` block use the same
/// fields; a run's fields override the defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neg_examples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_examples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_chars: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accept_threshold: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_attempts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_df: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Dataset names to run on; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub datasets: Option<Vec<String>>,
    /// Backend names to run on; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backends: Option<Vec<String>>,
}

macro_rules! overlay {
    ($base:expr, $over:expr, $($f:ident),*) => {
        RunConfig { $($f: $over.$f.clone().or_else(|| $base.$f.clone()),)* }
    };
}

impl RunConfig {
    fn merged(&self, over: &RunConfig) -> RunConfig {
        overlay!(
            self,
            over,
            label,
            strategy,
            template,
            output,
            shots,
            selection,
            neg_examples,
            pos_examples,
            max_chars,
            accept_threshold,
            max_attempts,
            max_tokens,
            min_df,
            alpha,
            datasets,
            backends
        )
    }
}

/// A run with defaults applied and everything checked.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRun {
    pub label: String,
    pub method: Method,
    pub template: Option<String>,
    pub selection: Option<SelectionMethod>,
    pub datasets: Vec<String>,
    pub backends: Vec<String>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Serialize(e.to_string()))
    }

    pub fn dataset(&self, name: &str) -> Option<&DatasetConfig> {
        self.datasets.iter().find(|d| d.name == name)
    }

    pub fn backend(&self, name: &str) -> Option<&BackendConfig> {
        self.backends.iter().find(|b| b.name == name)
    }

    /// Validates the whole file against `templates` and returns the runs
    /// with defaults applied. Errors name the offending field.
    pub fn resolve(
        &self,
        templates: &BTreeMap<String, PromptTemplate>,
    ) -> Result<Vec<ResolvedRun>, ConfigError> {
        if self.k_folds < 2 {
            return Err(invalid("k_folds", "must be at least 2"));
        }
        if self.datasets.is_empty() {
            return Err(invalid("datasets", "at least one dataset is required"));
        }
        let mut seen = HashSet::new();
        for (i, d) in self.datasets.iter().enumerate() {
            if !is_safe_name(&d.name) {
                return Err(invalid(
                    format!("datasets[{i}].name"),
                    "must be non-empty [A-Za-z0-9._-]",
                ));
            }
            if !seen.insert(d.name.as_str()) {
                return Err(invalid(
                    format!("datasets[{i}].name"),
                    format!("duplicate `{}`", d.name),
                ));
            }
            if d.topic.trim().is_empty() {
                return Err(invalid(format!("datasets[{i}].topic"), "must not be empty"));
            }
        }
        let mut seen = HashSet::new();
        for (i, b) in self.backends.iter().enumerate() {
            if !is_safe_name(&b.name) {
                return Err(invalid(
                    format!("backends[{i}].name"),
                    "must be non-empty [A-Za-z0-9._-]",
                ));
            }
            if !seen.insert(b.name.as_str()) {
                return Err(invalid(
                    format!("backends[{i}].name"),
                    format!("duplicate `{}`", b.name),
                ));
            }
            if b.base_url.trim().is_empty() {
                return Err(invalid(
                    format!("backends[{i}].base_url"),
                    "must not be empty",
                ));
            }
            if b.model.trim().is_empty() {
                return Err(invalid(format!("backends[{i}].model"), "must not be empty"));
            }
            if b.concurrency == 0 {
                return Err(invalid(
                    format!("backends[{i}].concurrency"),
                    "must be at least 1",
                ));
            }
        }
        if let Some(e) = &self.embedder {
            if e.kind == EmbedderKind::Openai && (e.base_url.is_none() || e.model.is_none()) {
                return Err(invalid(
                    "embedder",
                    "openai embedders need base_url and model",
                ));
            }
            if e.dimension == Some(0) {
                return Err(invalid("embedder.dimension", "must be positive"));
            }
        }
        let blocks: Vec<(String, RunConfig)> = if self.runs.is_empty() {
            vec![("defaults".to_string(), self.defaults.clone())]
        } else {
            self.runs
                .iter()
                .enumerate()
                .map(|(i, r)| (format!("runs[{i}]"), self.defaults.merged(r)))
                .collect()
        };
        let mut labels = HashSet::new();
        let mut out = Vec::new();
        for (path, r) in blocks {
            let run = self.resolve_one(&path, &r, templates)?;
            if !labels.insert(run.label.clone()) {
                return Err(invalid(
                    format!("{path}.label"),
                    format!("duplicate `{}`", run.label),
                ));
            }
            out.push(run);
        }
        Ok(out)
    }

    fn resolve_one(
        &self,
        path: &str,
        r: &RunConfig,
        templates: &BTreeMap<String, PromptTemplate>,
    ) -> Result<ResolvedRun, ConfigError> {
        let f = |name: &str| format!("{path}.{name}");
        let strategy = r.strategy.unwrap_or(StrategyKind::Base);
        let shots = r.shots.unwrap_or(0);
        let selection = match (shots, r.selection) {
            (0, Some(_)) => return Err(invalid(f("selection"), "must be absent when shots = 0")),
            (0, None) => None,
            (_, None) => {
                return Err(invalid(
                    f("selection"),
                    format!("required when shots = {shots}"),
                ))
            }
            (_, Some(SelectionKind::Random)) => Some(SelectionMethod::Random { seed: self.seed }),
            (_, Some(SelectionKind::Knn)) => Some(SelectionMethod::Knn),
            (_, Some(SelectionKind::KnnBalanced)) => {
                let neg = r
                    .neg_examples
                    .ok_or_else(|| invalid(f("neg_examples"), "required for knn_balanced"))?;
                let pos = r
                    .pos_examples
                    .ok_or_else(|| invalid(f("pos_examples"), "required for knn_balanced"))?;
                if neg + pos != shots {
                    return Err(invalid(
                        f("neg_examples"),
                        format!("neg_examples + pos_examples must equal shots ({shots})"),
                    ));
                }
                Some(SelectionMethod::KnnBalanced { neg, pos })
            }
        };
        if matches!(
            selection,
            Some(SelectionMethod::Knn | SelectionMethod::KnnBalanced { .. })
        ) && self.embedder.is_none()
        {
            return Err(invalid(
                "embedder",
                format!("required by {path} (similarity selection)"),
            ));
        }
        let mut template = None;
        let method = match strategy {
            StrategyKind::Base => {
                let name = r
                    .template
                    .clone()
                    .ok_or_else(|| invalid(f("template"), "required for the base strategy"))?;
                let t = templates
                    .get(&name)
                    .ok_or_else(|| invalid(f("template"), format!("unknown template `{name}`")))?;
                let output = r
                    .output
                    .ok_or_else(|| invalid(f("output"), "required for the base strategy"))?;
                check_compatible(t, output).map_err(|e| invalid(f("output"), e.to_string()))?;
                if shots > 0 && !t.supports_examples() {
                    return Err(invalid(
                        f("shots"),
                        format!("template `{name}` has no example slots"),
                    ));
                }
                template = Some(name);
                Method::Llm(StrategyConfig::Base {
                    template: t.name.clone(),
                    output,
                    shots,
                })
            }
            StrategyKind::Chunking => {
                let max_chars = r.max_chars.unwrap_or(DEFAULT_MAX_CHARS);
                if max_chars == 0 {
                    return Err(invalid(f("max_chars"), "must be positive"));
                }
                Method::Llm(StrategyConfig::Chunking { max_chars, shots })
            }
            StrategyKind::Cot1 | StrategyKind::Cot2 | StrategyKind::Tot if shots > 0 => {
                return Err(invalid(
                    f("shots"),
                    "chain and tree of thoughts are zero-shot only",
                ));
            }
            StrategyKind::Cot1 => Method::Llm(StrategyConfig::Cot1),
            StrategyKind::Cot2 => Method::Llm(StrategyConfig::Cot2),
            StrategyKind::Tot => {
                let d = ToTParams::default();
                let p = ToTParams {
                    accept_threshold: r.accept_threshold.unwrap_or(d.accept_threshold),
                    max_attempts_per_step: r.max_attempts.unwrap_or(d.max_attempts_per_step),
                    max_tokens: r.max_tokens.unwrap_or(d.max_tokens),
                    seed: self.seed,
                };
                p.validate().map_err(|e| invalid(f("strategy"), e))?;
                Method::Llm(StrategyConfig::Tot(p))
            }
            StrategyKind::NaiveBayes => {
                if shots > 0 {
                    return Err(invalid(f("shots"), "naive_bayes takes no examples"));
                }
                let alpha = r.alpha.unwrap_or(crate::baseline::DEFAULT_ALPHA);
                if alpha.is_nan() || alpha <= 0.0 {
                    return Err(invalid(f("alpha"), "must be positive"));
                }
                Method::NaiveBayes {
                    min_df: r.min_df.unwrap_or(crate::baseline::DEFAULT_MIN_DF),
                    alpha,
                }
            }
        };
        let datasets = match &r.datasets {
            Some(names) => {
                for n in names {
                    if self.dataset(n).is_none() {
                        return Err(invalid(f("datasets"), format!("unknown dataset `{n}`")));
                    }
                }
                names.clone()
            }
            None => self.datasets.iter().map(|d| d.name.clone()).collect(),
        };
        let backends = if matches!(method, Method::NaiveBayes { .. }) {
            Vec::new()
        } else {
            let names = match &r.backends {
                Some(names) => names.clone(),
                None => self.backends.iter().map(|b| b.name.clone()).collect(),
            };
            if names.is_empty() {
                return Err(invalid(
                    "backends",
                    format!("{path} needs at least one backend"),
                ));
            }
            let needs_logprobs = matches!(
                method,
                Method::Llm(StrategyConfig::Base {
                    output: OutputMethod::TokenWord | OutputMethod::TokenJson,
                    ..
                }) | Method::Llm(StrategyConfig::Chunking { .. })
            );
            for n in &names {
                let b = self
                    .backend(n)
                    .ok_or_else(|| invalid(f("backends"), format!("unknown backend `{n}`")))?;
                if needs_logprobs && !b.logprobs {
                    return Err(invalid(
                        f("output"),
                        format!("token probabilities need a backend with logprobs; `{n}` has none"),
                    ));
                }
            }
            names
        };
        let label = match &r.label {
            Some(l) if is_safe_name(l) => l.clone(),
            Some(_) => return Err(invalid(f("label"), "must be non-empty [A-Za-z0-9._-]")),
            None if path == "defaults" => "default".to_string(),
            None => return Err(invalid(f("label"), "required")),
        };
        Ok(ResolvedRun {
            label,
            method,
            template,
            selection,
            datasets,
            backends,
        })
    }
}

fn is_safe_name(s: &str) -> bool {
    !s.is_empty()
        && s != "."
        && s != ".."
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::registry;

    const BASIC: &str = r#"
seed = 7

[[datasets]]
name = "toy"
path = "toy.csv"
topic = "Statins"

[[backends]]
name = "local"
kind = "openai"
base_url = "http://localhost:8080"
model = "m"

[embedder]
kind = "hashing"
dimension = 64

[defaults]
template = "B"
output = "token_word"

[[runs]]
label = "zs"

[[runs]]
label = "fs"
template = "B-FewShot"
shots = 3
selection = "knn"
"#;

    #[test]
    fn parses_and_resolves() {
        let c = ExperimentConfig::parse(BASIC).unwrap();
        assert_eq!(c.k_folds, 5);
        let runs = c.resolve(&registry()).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[1].selection, Some(SelectionMethod::Knn));
        assert_eq!(runs[0].backends, ["local"]);
    }

    #[test]
    fn round_trip() {
        let c = ExperimentConfig::parse(BASIC).unwrap();
        let again = ExperimentConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn missing_selection_names_field() {
        let text = BASIC.replace("selection = \"knn\"\n", "");
        let err = ExperimentConfig::parse(&text)
            .unwrap()
            .resolve(&registry())
            .unwrap_err();
        assert!(err.to_string().starts_with("runs[1].selection"), "{err}");
    }

    #[test]
    fn token_methods_need_logprobs() {
        let text = BASIC.replace("model = \"m\"", "model = \"m\"\nlogprobs = false");
        let err = ExperimentConfig::parse(&text)
            .unwrap()
            .resolve(&registry())
            .unwrap_err();
        assert!(err.to_string().starts_with("runs[0].output"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected_with_position() {
        let err = ExperimentConfig::parse(
            "seed = 1\nbogus = 2\n[[datasets]]\nname='a'\npath='p'\ntopic='t'\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }
}
