use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError, ResponseKind, Speaker, Usage};

pub const API_BASE_ENV: &str = "AUTOMIND_API_BASE";
pub const API_KEY_ENV: &str = "AUTOMIND_API_KEY";

/// Chat-completions HTTP backend (`POST {base}/chat/completions`).
pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            agent: config.into(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
        }
    }

    /// Reads `AUTOMIND_API_BASE` and `AUTOMIND_API_KEY`.
    pub fn from_env() -> Result<Self, LlmError> {
        let base = std::env::var(API_BASE_ENV)
            .ok()
            .filter(|v| !v.trim().is_empty())
            .ok_or_else(|| LlmError::Transport(format!("{API_BASE_ENV} is not set")))?;
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|v| !v.trim().is_empty());
        Ok(Self::new(base, key, Duration::from_secs(600)))
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, model: &str, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut call = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(request_body(model, request))
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(LlmError::Rejected { status, body });
        }
        let value: Value = serde_json::from_str(&body)
            .map_err(|e| LlmError::Transport(format!("undecodable response body: {e}")))?;
        parse_completion(&value)
    }
}

pub(crate) fn request_body(model: &str, request: &ChatRequest) -> Value {
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| {
            let role = match m.speaker {
                Speaker::System => "system",
                Speaker::User => "user",
                Speaker::Assistant => "assistant",
            };
            json!({"role": role, "content": m.text})
        })
        .collect();
    let mut body = json!({
        "model": model,
        "messages": messages,
        "temperature": request.sampling.temperature,
        "max_tokens": request.sampling.max_output_tokens,
    });
    if let Some(tool) = &request.tool_schema {
        body["tools"] = json!([{
            "type": "function",
            "function": {
                "name": tool.name,
                "description": tool.description,
                "parameters": tool.parameters,
            }
        }]);
        body["tool_choice"] = json!({"type": "function", "function": {"name": tool.name}});
    }
    body
}

pub(crate) fn parse_completion(value: &Value) -> Result<ChatResponse, LlmError> {
    let message = &value["choices"][0]["message"];
    if message.is_null() {
        return Err(LlmError::Transport("response has no choices".into()));
    }
    let usage = Usage {
        input_tokens: value["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        output_tokens: value["usage"]["completion_tokens"].as_u64().unwrap_or(0),
    };
    if let Some(call) = message["tool_calls"].as_array().and_then(|c| c.first()) {
        let name = call["function"]["name"].as_str().unwrap_or_default();
        let raw = &call["function"]["arguments"];
        let arguments = match raw {
            Value::String(s) => serde_json::from_str(s).map_err(|e| {
                LlmError::SchemaViolation(format!("tool arguments are not JSON: {e}"))
            })?,
            other => other.clone(),
        };
        return Ok(ChatResponse {
            kind: ResponseKind::ToolCall,
            text: None,
            tool_name: Some(name.to_string()),
            tool_arguments: Some(arguments),
            usage,
        });
    }
    Ok(ChatResponse {
        kind: ResponseKind::Text,
        text: Some(message["content"].as_str().unwrap_or_default().to_string()),
        tool_name: None,
        tool_arguments: None,
        usage,
    })
}
