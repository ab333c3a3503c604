//! Chat-completion gateway with per-role model routing, token accounting and
//! transcript record/replay.

mod gateway;
mod http;
mod replay;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use gateway::{ChatBackend, FnBackend, Gateway, RetryPolicy, TokenLedger, TokenTotals};
pub use http::{HttpBackend, API_BASE_ENV, API_KEY_ENV};
pub use replay::{read_transcript, Exchange, ReplayBackend};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("no model configured for role `{0}`")]
    UnmappedRole(Role),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend rejected the request (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("token budget of {cap} exhausted ({used} used)")]
    BudgetExceeded { cap: u64, used: u64 },
    #[error("no recorded exchange for role `{role}` with digest {digest}")]
    ReplayMiss { role: Role, digest: String },
    #[error("malformed transcript line {line}: {reason}")]
    BadTranscript { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LlmError {
    /// Only transport-level failures are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::Rejected { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// The six agent roles, each routed to its own model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Retriever,
    Analyzer,
    Planner,
    Coder,
    Improver,
    Verifier,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Retriever,
        Role::Analyzer,
        Role::Planner,
        Role::Coder,
        Role::Improver,
        Role::Verifier,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Retriever => "retriever",
            Role::Analyzer => "analyzer",
            Role::Planner => "planner",
            Role::Coder => "coder",
            Role::Improver => "improver",
            Role::Verifier => "verifier",
        }
    }

    /// Configuration key, e.g. `agent.planner.model`.
    pub fn config_key(self) -> String {
        format!("agent.{}.model", self.as_str())
    }

    /// Sampling temperature used when the caller does not override it.
    pub fn default_temperature(self) -> f64 {
        match self {
            Role::Planner | Role::Improver => 0.5,
            Role::Coder | Role::Verifier | Role::Analyzer => 0.2,
            Role::Retriever => 0.7,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown role `{s}`"))
    }
}

/// Target model placeholder; replace with the model under evaluation.
pub const TARGET_MODEL: &str = "&TARGET_MODEL";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleModelConfig {
    models: BTreeMap<Role, String>,
}

impl Default for RoleModelConfig {
    fn default() -> Self {
        let mut models = BTreeMap::new();
        models.insert(Role::Retriever, "gpt-4o-mini-2024-07-18".to_string());
        models.insert(Role::Analyzer, "gpt-4o-mini-2024-07-18".to_string());
        models.insert(Role::Planner, TARGET_MODEL.to_string());
        models.insert(Role::Coder, TARGET_MODEL.to_string());
        models.insert(Role::Improver, TARGET_MODEL.to_string());
        models.insert(Role::Verifier, "gpt-4.1-mini-2025-04-14".to_string());
        Self { models }
    }
}

impl RoleModelConfig {
    pub fn empty() -> Self {
        Self {
            models: BTreeMap::new(),
        }
    }

    pub fn with(mut self, role: Role, model: impl Into<String>) -> Self {
        self.set(role, model);
        self
    }

    pub fn set(&mut self, role: Role, model: impl Into<String>) {
        self.models.insert(role, model.into());
    }

    pub fn model_for(&self, role: Role) -> Option<&str> {
        self.models
            .get(&role)
            .map(String::as_str)
            .filter(|m| !m.is_empty())
    }

    /// Replaces every `&TARGET_MODEL` placeholder with a concrete model.
    pub fn resolve_target(&mut self, model: &str) {
        for value in self.models.values_mut() {
            if value == TARGET_MODEL {
                *value = model.to_string();
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match Role::ALL.into_iter().find(|r| self.model_for(*r).is_none()) {
            Some(role) => Err(format!("`{}` is not set", role.config_key())),
            None => Ok(()),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Role, &str)> {
        self.models.iter().map(|(r, m)| (*r, m.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub speaker: Speaker,
    pub text: String,
}

impl Message {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::Assistant,
            text: text.into(),
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::System,
            text: text.into(),
        }
    }
}

/// Structured function description offered to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

impl ToolSchema {
    /// Checks a tool call's arguments: every required key present and every
    /// non-null value of the declared JSON type.
    pub fn check_arguments(&self, arguments: &Value) -> Result<(), LlmError> {
        let Some(object) = arguments.as_object() else {
            return Err(LlmError::SchemaViolation(
                "tool arguments are not an object".into(),
            ));
        };
        let required = self.parameters["required"]
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(Value::as_str);
        for key in required {
            if !object.contains_key(key) {
                return Err(LlmError::SchemaViolation(format!(
                    "missing required field `{key}`"
                )));
            }
        }
        let properties = self.parameters["properties"].as_object();
        for (key, value) in object {
            let Some(declared) = properties.and_then(|p| p.get(key)) else {
                continue;
            };
            let ok = match declared["type"].as_str() {
                _ if value.is_null() => true,
                Some("boolean") => value.is_boolean(),
                Some("string") => value.is_string(),
                Some("number") => value.is_number(),
                Some("integer") => value.is_i64() || value.is_u64(),
                Some("object") => value.is_object(),
                Some("array") => value.is_array(),
                _ => true,
            };
            if !ok {
                return Err(LlmError::SchemaViolation(format!(
                    "field `{key}` has the wrong type: {value}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Sampling {
    pub fn for_role(role: Role) -> Self {
        Self {
            temperature: role.default_temperature(),
            max_output_tokens: 8192,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role: Role,
    pub messages: Vec<Message>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_schema: Option<ToolSchema>,
    pub sampling: Sampling,
}

impl ChatRequest {
    /// Single user-turn request with the role's default sampling.
    pub fn prompt(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            messages: vec![Message::user(text)],
            tool_schema: None,
            sampling: Sampling::for_role(role),
        }
    }

    pub fn with_tool(mut self, schema: ToolSchema) -> Self {
        self.tool_schema = Some(schema);
        self
    }

    /// Hex SHA-256 over the role and the ordered messages; replay key.
    pub fn digest(&self) -> String {
        let canonical = serde_json::json!({
            "role": self.role,
            "messages": self.messages,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Text,
    ToolCall,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub kind: ResponseKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_arguments: Option<Value>,
    #[serde(default)]
    pub usage: Usage,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            kind: ResponseKind::Text,
            text: Some(text.into()),
            tool_name: None,
            tool_arguments: None,
            usage: Usage::default(),
        }
    }

    pub fn tool_call(name: impl Into<String>, arguments: Value) -> Self {
        Self {
            kind: ResponseKind::ToolCall,
            text: None,
            tool_name: Some(name.into()),
            tool_arguments: Some(arguments),
            usage: Usage::default(),
        }
    }

    pub fn with_usage(mut self, input_tokens: u64, output_tokens: u64) -> Self {
        self.usage = Usage {
            input_tokens,
            output_tokens,
        };
        self
    }

    /// Text content, empty for tool calls.
    pub fn content(&self) -> &str {
        self.text.as_deref().unwrap_or("")
    }

    pub fn check_shape(&self) -> Result<(), LlmError> {
        match self.kind {
            ResponseKind::Text if self.text.is_none() => Err(LlmError::SchemaViolation(
                "text response without text".into(),
            )),
            ResponseKind::ToolCall if self.tool_name.is_none() || self.tool_arguments.is_none() => {
                Err(LlmError::SchemaViolation(
                    "tool call without name or arguments".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}
