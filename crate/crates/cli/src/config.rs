//! Declarative run configuration.
//!
//! The config file is TOML with one section per concern, so a run is fully
//! described by a single diffable file. The experiment fingerprint hashes
//! only the science knobs (data, sampling, conditions, respondent identity,
//! generation parameters, templates) and deliberately excludes operational
//! settings like the output directory and worker count: reruns of the same
//! experiment at different concurrency share a config hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use conviction_core::corpus::{Condition, DatasetTag};
use conviction_core::dialogue::PromptTemplates;
use conviction_core::respondent::{
    BernoulliAgent, BernoulliAgentSpec, GenerationParams, RemoteRespondent, Respondent, RetryPolicy,
};
use conviction_core::seed::fnv1a64;

use crate::commands::CliError;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(default, rename = "dataset")]
    pub datasets: Vec<DatasetSection>,
    #[serde(default)]
    pub exemplars: Option<ExemplarSection>,
    pub respondent: RespondentSection,
    #[serde(default)]
    pub generation: GenerationSection,
    #[serde(default)]
    pub templates: TemplateSection,
    #[serde(default)]
    pub simulate: SimulateSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub n: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub conditions: Vec<Condition>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_concurrency() -> usize {
    8
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    pub tag: DatasetTag,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExemplarSection {
    pub path: PathBuf,
    pub tag: DatasetTag,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RespondentKind {
    Remote,
    Bernoulli,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RespondentSection {
    pub kind: RespondentKind,
    pub base_url: Option<String>,
    pub model: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_backoff_factor")]
    pub backoff_factor: f64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_one")]
    pub q_init: f64,
    #[serde(default = "default_one")]
    pub p_stick: f64,
    #[serde(default = "default_one")]
    pub q_flex_correct: f64,
    #[serde(default)]
    pub q_flex_incorrect: f64,
    #[serde(default)]
    pub agent_seed: u64,
}

fn default_timeout_secs() -> u64 {
    120
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    1000
}
fn default_backoff_factor() -> f64 {
    4.0
}
fn default_max_in_flight() -> usize {
    8
}
fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSection {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

fn default_temperature() -> f64 {
    0.7
}
fn default_max_output_tokens() -> u32 {
    512
}

impl Default for GenerationSection {
    fn default() -> Self {
        Self {
            temperature: default_temperature(),
            max_output_tokens: default_max_output_tokens(),
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSection {
    pub version: Option<String>,
    pub system: Option<String>,
    pub single_shot: Option<String>,
    pub stick_or_switch: Option<String>,
    pub exemplar: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default = "default_synthetic_options")]
    pub synthetic_options: usize,
}

fn default_synthetic_options() -> usize {
    4
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            synthetic_options: default_synthetic_options(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&raw)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    /// Structural problems that make the config unusable, each with a
    /// remediation hint.
    pub fn shape_problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.run.n == 0 {
            problems.push("run.n must be at least 1".to_string());
        }
        if self.run.conditions.is_empty() {
            problems.push("run.conditions must list at least one condition".to_string());
        }
        if self.run.concurrency == 0 {
            problems.push("run.concurrency must be at least 1; use 1 for sequential".to_string());
        }
        match self.respondent.kind {
            RespondentKind::Remote => {
                if self.respondent.base_url.is_none() {
                    problems
                        .push("respondent.base_url is required for kind = \"remote\"".to_string());
                }
                if self.respondent.model.is_none() {
                    problems.push("respondent.model is required for kind = \"remote\"".to_string());
                }
                if self.datasets.is_empty() {
                    problems
                        .push("at least one [[dataset]] is required for remote runs".to_string());
                }
            }
            RespondentKind::Bernoulli => {
                if let Err(e) = self.agent_spec().validate() {
                    problems.push(e.to_string());
                }
                if self.datasets.is_empty() && !(3..=5).contains(&self.simulate.synthetic_options) {
                    problems.push("simulate.synthetic_options must be between 3 and 5".to_string());
                }
            }
        }
        if let Err(e) = self.generation_params().validate() {
            problems.push(e.to_string());
        }
        problems
    }

    pub fn agent_spec(&self) -> BernoulliAgentSpec {
        BernoulliAgentSpec {
            q_init: self.respondent.q_init,
            p_stick: self.respondent.p_stick,
            q_flex_correct: self.respondent.q_flex_correct,
            q_flex_incorrect: self.respondent.q_flex_incorrect,
            seed: self.respondent.agent_seed,
        }
    }

    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            temperature: self.generation.temperature,
            max_output_tokens: self.generation.max_output_tokens,
            model_name: self
                .respondent
                .model
                .clone()
                .unwrap_or_else(|| "bernoulli-agent".to_string()),
            extra: self.generation.extra.clone(),
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.respondent.max_retries,
            initial_backoff: Duration::from_millis(self.respondent.initial_backoff_ms),
            backoff_factor: self.respondent.backoff_factor,
        }
    }

    pub fn build_templates(&self) -> PromptTemplates {
        PromptTemplates::with_overrides(
            self.templates.system.clone(),
            self.templates.single_shot.clone(),
            self.templates.stick_or_switch.clone(),
            self.templates.exemplar.clone(),
            self.templates.version.clone(),
        )
    }

    pub fn build_respondent(&self) -> Result<Box<dyn Respondent>, CliError> {
        match self.respondent.kind {
            RespondentKind::Remote => {
                let base_url = self.respondent.base_url.clone().ok_or_else(|| {
                    CliError::Config("respondent.base_url is required".to_string())
                })?;
                Ok(Box::new(RemoteRespondent::with_settings(
                    base_url,
                    Duration::from_secs(self.respondent.timeout_secs),
                    self.retry_policy(),
                    self.respondent.max_in_flight,
                    std::env::var(conviction_core::respondent::API_KEY_ENV).ok(),
                )))
            }
            RespondentKind::Bernoulli => {
                let agent = BernoulliAgent::new(self.agent_spec())
                    .map_err(|e| CliError::Config(e.to_string()))?;
                Ok(Box::new(agent))
            }
        }
    }

    /// Stable hash of the science knobs.
    pub fn experiment_fingerprint(&self) -> String {
        let science = serde_json::json!({
            "datasets": self
                .datasets
                .iter()
                .map(|d| (d.path.display().to_string(), d.tag.as_str()))
                .collect::<Vec<_>>(),
            "n": self.run.n,
            "master_seed": self.run.master_seed,
            "conditions": self.run.conditions,
            "respondent": {
                "kind": match self.respondent.kind {
                    RespondentKind::Remote => "remote",
                    RespondentKind::Bernoulli => "bernoulli",
                },
                "base_url": self.respondent.base_url,
                "model": self.respondent.model,
                "q_init": self.respondent.q_init,
                "p_stick": self.respondent.p_stick,
                "q_flex_correct": self.respondent.q_flex_correct,
                "q_flex_incorrect": self.respondent.q_flex_incorrect,
                "agent_seed": self.respondent.agent_seed,
            },
            "generation": {
                "temperature": self.generation.temperature,
                "max_output_tokens": self.generation.max_output_tokens,
                "extra": self.generation.extra,
            },
            "templates": self.build_templates(),
            "exemplars": self
                .exemplars
                .as_ref()
                .map(|e| (e.path.display().to_string(), e.tag.as_str(), e.k)),
            "synthetic_options": self.simulate.synthetic_options,
        });
        format!("{:016x}", fnv1a64(science.to_string().as_bytes()))
    }
}
