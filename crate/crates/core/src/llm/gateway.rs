use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::replay::Exchange;
use super::{ChatRequest, ChatResponse, LlmError, RoleModelConfig};

/// Anything that can answer a chat request for a concrete model.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, model: &str, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

/// Backend driven by a closure; used for scripted fixtures.
pub struct FnBackend<F>(pub F);

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<ChatResponse, LlmError> + Send + Sync,
{
    fn complete(&self, _model: &str, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (self.0)(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub input: u64,
    pub output: u64,
    pub total: u64,
}

/// Run-wide token counters.
#[derive(Debug, Default)]
pub struct TokenLedger {
    input: AtomicU64,
    output: AtomicU64,
}

impl TokenLedger {
    pub fn add(&self, input: u64, output: u64) {
        self.input.fetch_add(input, Ordering::Relaxed);
        self.output.fetch_add(output, Ordering::Relaxed);
    }

    pub fn totals(&self) -> TokenTotals {
        let input = self.input.load(Ordering::Relaxed);
        let output = self.output.load(Ordering::Relaxed);
        TokenTotals {
            input,
            output,
            total: input + output,
        }
    }
}

/// Routes requests to the configured model, retries transport failures,
/// accounts tokens and optionally records every exchange.
pub struct Gateway {
    models: RoleModelConfig,
    backend: Box<dyn ChatBackend>,
    ledger: TokenLedger,
    retry: RetryPolicy,
    token_cap: Option<u64>,
    recorder: Option<Mutex<File>>,
}

impl Gateway {
    pub fn new(models: RoleModelConfig, backend: impl ChatBackend + 'static) -> Self {
        Self {
            models,
            backend: Box::new(backend),
            ledger: TokenLedger::default(),
            retry: RetryPolicy::default(),
            token_cap: None,
            recorder: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_token_cap(mut self, cap: u64) -> Self {
        self.token_cap = Some(cap);
        self
    }

    /// Appends every completed exchange to `path` as one JSON line.
    pub fn record_to(mut self, path: &Path) -> Result<Self, LlmError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.recorder = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn models(&self) -> &RoleModelConfig {
        &self.models
    }

    pub fn tokens(&self) -> TokenTotals {
        self.ledger.totals()
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let model = self
            .models
            .model_for(request.role)
            .ok_or(LlmError::UnmappedRole(request.role))?;
        if request.messages.is_empty() {
            return Err(LlmError::SchemaViolation("request has no messages".into()));
        }
        if let Some(cap) = self.token_cap {
            let used = self.ledger.totals().total;
            if used >= cap {
                return Err(LlmError::BudgetExceeded { cap, used });
            }
        }

        let response = self.call_with_retry(model, request)?;
        self.ledger
            .add(response.usage.input_tokens, response.usage.output_tokens);
        self.record(request, &response)?;

        response.check_shape()?;
        if let (Some(schema), Some(args)) = (&request.tool_schema, &response.tool_arguments) {
            if response.tool_name.as_deref() != Some(schema.name.as_str()) {
                return Err(LlmError::SchemaViolation(format!(
                    "unexpected tool `{}`",
                    response.tool_name.as_deref().unwrap_or("")
                )));
            }
            schema.check_arguments(args)?;
        }
        Ok(response)
    }

    fn call_with_retry(
        &self,
        model: &str,
        request: &ChatRequest,
    ) -> Result<ChatResponse, LlmError> {
        let attempts = self.retry.attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.backend.complete(model, request) {
                Err(err) if err.is_retryable() && attempt < attempts => {
                    let delay = self.retry.base_delay * 2u32.pow(attempt - 1);
                    warn!(%err, attempt, ?delay, role = %request.role, "retrying completion");
                    std::thread::sleep(delay);
                }
                other => return other,
            }
        }
    }

    fn record(&self, request: &ChatRequest, response: &ChatResponse) -> Result<(), LlmError> {
        let Some(recorder) = &self.recorder else {
            return Ok(());
        };
        let exchange = Exchange::new(request.clone(), response.clone());
        let mut line = serde_json::to_string(&exchange)
            .map_err(|e| LlmError::Transport(format!("cannot serialize exchange: {e}")))?;
        line.push('\n');
        let mut file = recorder.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(line.as_bytes())?;
        file.flush()?;
        Ok(())
    }
}
