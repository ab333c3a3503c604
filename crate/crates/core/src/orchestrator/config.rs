use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::coder::CoderConfig;
use crate::llm::{Role, RoleModelConfig};
use crate::policy::PolicyConfig;
use crate::sandbox::DEFAULT_EXEC_TIMEOUT_SECS;

/// Environment variable naming the model that replaces `&TARGET_MODEL`.
pub const TARGET_MODEL_ENV: &str = "AUTOMIND_TARGET_MODEL";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config does not parse: {0}")]
    ParseFailure(String),
    #[error("invalid value for `{key}`: {reason}")]
    ValidationFailure { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::ValidationFailure {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunPaths {
    pub task_dir: Option<PathBuf>,
    pub index_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub policy: PolicyConfig,
    pub coder: CoderConfig,
    pub models: RoleModelConfig,
    pub steps: u64,
    /// Wall-clock budget in seconds.
    pub time_limit: u64,
    /// Per-execution timeout in seconds.
    pub exec_timeout: u64,
    pub knowledge_enabled: bool,
    pub seed: u64,
    pub memory_bound: usize,
    pub num_papers: usize,
    pub num_tricks: usize,
    pub label_rounds: usize,
    /// Let the analyzer model rewrite the static data profile.
    pub refine_analysis: bool,
    pub token_cap: Option<u64>,
    pub runner_cmd: Option<String>,
    pub paths: RunPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            policy: PolicyConfig::default(),
            coder: CoderConfig::default(),
            models: RoleModelConfig::default(),
            steps: 500,
            time_limit: 86_400,
            exec_timeout: DEFAULT_EXEC_TIMEOUT_SECS,
            knowledge_enabled: true,
            seed: 0,
            memory_bound: crate::action::DEFAULT_MEMORY_BOUND,
            num_papers: 3,
            num_tricks: 3,
            label_rounds: 5,
            refine_analysis: true,
            token_cap: None,
            runner_cmd: None,
            paths: RunPaths::default(),
        }
    }
}

/// Every key the loader accepts, in documentation order.
pub const KNOWN_KEYS: &[&str] = &[
    "agent.search.num_drafts",
    "agent.search.debug_prob",
    "agent.search.greedy_prob",
    "agent.search.trick_prob",
    "agent.search.max_debug_depth",
    "agent.steps",
    "agent.time_limit",
    "exec.timeout",
    "agent.retriever.model",
    "agent.analyzer.model",
    "agent.planner.model",
    "agent.coder.model",
    "agent.improver.model",
    "agent.verifier.model",
    "agent.seed",
    "agent.memory_bound",
    "agent.analyzer.refine",
    "agent.coder.complexity_threshold",
    "agent.coder.retry_limit",
    "agent.coder.max_steps",
    "kb.enabled",
    "kb.index",
    "kb.num_papers",
    "kb.num_tricks",
    "kb.label_rounds",
    "llm.token_cap",
    "sandbox.runner_cmd",
];

impl RunConfig {
    pub fn exec_timeout(&self) -> Duration {
        Duration::from_secs(self.exec_timeout)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.policy.validate().map_err(|e| {
            let key = match &e {
                crate::policy::PolicyConfigError::ProbabilityOutOfRange { name, .. }
                | crate::policy::PolicyConfigError::NotPositive(name) => {
                    format!("agent.search.{name}")
                }
            };
            invalid(&key, e.to_string())
        })?;
        self.coder
            .validate()
            .map_err(|reason| invalid("agent.coder", reason))?;
        if let Err(reason) = self.models.validate() {
            return Err(invalid("agent.*.model", reason));
        }
        if self.steps == 0 {
            return Err(invalid("agent.steps", "must be at least 1"));
        }
        if self.time_limit == 0 {
            return Err(invalid("agent.time_limit", "must be positive"));
        }
        if self.exec_timeout == 0 {
            return Err(invalid("exec.timeout", "must be positive"));
        }
        if self.exec_timeout > self.time_limit {
            return Err(invalid(
                "exec.timeout",
                format!(
                    "{} exceeds agent.time_limit {}",
                    self.exec_timeout, self.time_limit
                ),
            ));
        }
        if self.label_rounds == 0 {
            return Err(invalid("kb.label_rounds", "must be at least 1"));
        }
        Ok(())
    }
}

/// Flattens nested tables into dotted keys, so `[agent.search]` sections and
/// bare dotted keys are equivalent.
fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64, ConfigError> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(invalid(key, "expected a number")),
    }
}

fn as_u64(key: &str, v: &toml::Value) -> Result<u64, ConfigError> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        toml::Value::Integer(_) => Err(invalid(key, "must not be negative")),
        _ => Err(invalid(key, "expected an integer")),
    }
}

fn as_bool(key: &str, v: &toml::Value) -> Result<bool, ConfigError> {
    v.as_bool()
        .ok_or_else(|| invalid(key, "expected true or false"))
}

fn as_str<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str, ConfigError> {
    v.as_str().ok_or_else(|| invalid(key, "expected a string"))
}

fn apply(cfg: &mut RunConfig, key: &str, v: &toml::Value) -> Result<(), ConfigError> {
    let usize_of = |v| as_u64(key, v).map(|n| n as usize);
    match key {
        "agent.search.num_drafts" => cfg.policy.n_init = usize_of(v)?,
        "agent.search.debug_prob" => cfg.policy.h_debug = as_f64(key, v)?,
        "agent.search.greedy_prob" => cfg.policy.h_greedy = as_f64(key, v)?,
        "agent.search.trick_prob" => cfg.policy.h_trick = as_f64(key, v)?,
        "agent.search.max_debug_depth" => {
            cfg.policy.max_debug_depth =
                u32::try_from(as_u64(key, v)?).map_err(|_| invalid(key, "too large"))?
        }
        "agent.steps" => cfg.steps = as_u64(key, v)?,
        "agent.time_limit" => cfg.time_limit = as_u64(key, v)?,
        "exec.timeout" => cfg.exec_timeout = as_u64(key, v)?,
        "agent.seed" => cfg.seed = as_u64(key, v)?,
        "agent.memory_bound" => cfg.memory_bound = usize_of(v)?,
        "agent.analyzer.refine" => cfg.refine_analysis = as_bool(key, v)?,
        "agent.coder.complexity_threshold" => cfg.coder.complexity_threshold = as_f64(key, v)?,
        "agent.coder.retry_limit" => {
            cfg.coder.retry_limit =
                u32::try_from(as_u64(key, v)?).map_err(|_| invalid(key, "too large"))?
        }
        "agent.coder.max_steps" => cfg.coder.max_steps = usize_of(v)?,
        "kb.enabled" => cfg.knowledge_enabled = as_bool(key, v)?,
        "kb.index" => cfg.paths.index_dir = Some(PathBuf::from(as_str(key, v)?)),
        "kb.num_papers" => cfg.num_papers = usize_of(v)?,
        "kb.num_tricks" => cfg.num_tricks = usize_of(v)?,
        "kb.label_rounds" => cfg.label_rounds = usize_of(v)?,
        "llm.token_cap" => cfg.token_cap = Some(as_u64(key, v)?),
        "sandbox.runner_cmd" => cfg.runner_cmd = Some(as_str(key, v)?.to_string()),
        _ => {
            let role = key
                .strip_prefix("agent.")
                .and_then(|k| k.strip_suffix(".model"))
                .and_then(|r| r.parse::<Role>().ok());
            match role {
                Some(role) => cfg.models.set(role, as_str(key, v)?),
                None => return Err(invalid(key, "unknown key")),
            }
        }
    }
    Ok(())
}

/// Parses flat dotted-key config text. Missing keys keep their defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::ParseFailure(e.to_string()))?;
    let mut pairs = Vec::new();
    flatten("", &table, &mut pairs);
    let mut cfg = RunConfig::default();
    for (key, value) in &pairs {
        apply(&mut cfg, key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and validates a config file. `env` is consulted for
/// [`TARGET_MODEL_ENV`], which replaces every `&TARGET_MODEL` placeholder.
pub fn load_config(
    path: &Path,
    env: impl Fn(&str) -> Option<String>,
) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut cfg = parse_config(&text)?;
    if let Some(model) = env(TARGET_MODEL_ENV).filter(|m| !m.is_empty()) {
        cfg.models.resolve_target(&model);
    }
    Ok(cfg)
}
