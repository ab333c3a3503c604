//! Workspace layout and pluggable script execution.
//!
//! Generated solutions depend on a fixed layout relative to the working
//! directory: task data under `./input` (read-only), predictions in
//! `./submission/submission.csv`, the validation score in
//! `./submission/eval_metric.txt`, and scratch space in `./working`.
//!
//! Execution goes through the [`Executor`] contract. [`FakeExecutor`] serves
//! scripted outcomes for hermetic tests; [`ShimExecutor`] drives an external
//! interpreter session over a line-delimited JSON protocol.

mod fake;
mod shim;
mod workspace;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::truncate_default;

pub use fake::{FakeCall, FakeExecutor, FakeRule};
pub use shim::{ShimCommand, ShimExecutor, ShimRequest, ShimResponse, SHIM_GRACE};
pub use workspace::{collect_artifacts, prepare_workspace, Artifacts, Workspace};

/// Default per-execution timeout in seconds (nine hours).
pub const DEFAULT_EXEC_TIMEOUT_SECS: u64 = 32_400;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("executor unavailable: {0}")]
    ExecutorUnavailable(String),
    #[error("session lost: {0}")]
    SessionLost(String),
    #[error("timeout must be positive")]
    InvalidTimeout,
}

impl SandboxError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        SandboxError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

/// Outcome of running code. Output is stdout and stderr merged in arrival
/// order and truncated to its first and last 4,000 characters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    pub exit_ok: bool,
    pub output: String,
    pub duration_secs: f64,
    pub timed_out: bool,
}

impl ExecResult {
    pub fn new(output: &str, exit_ok: bool, duration_secs: f64, timed_out: bool) -> Self {
        Self {
            exit_ok: exit_ok && !timed_out,
            output: truncate_default(output),
            duration_secs,
            timed_out,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.exit_ok && !self.timed_out
    }
}

/// Result of a syntax check: `Err` carries the interpreter's message.
pub type SyntaxCheck = Result<(), String>;

/// A stateful interpreter session; names bound by one fragment stay visible
/// to later fragments until the session closes.
pub trait Session: Send {
    /// Validates syntax without executing anything or touching session state.
    fn check_syntax(&mut self, code: &str) -> Result<SyntaxCheck, SandboxError>;
    fn exec_fragment(&mut self, code: &str, timeout: Duration) -> Result<ExecResult, SandboxError>;
    fn close(self: Box<Self>) -> Result<(), SandboxError>;
}

pub trait Executor: Send + Sync {
    fn open_session(&self, workspace: &Workspace) -> Result<Box<dyn Session>, SandboxError>;
    /// Runs `code` as a fresh script with the workspace root as working
    /// directory. Stateless.
    fn run_script(
        &self,
        workspace: &Workspace,
        code: &str,
        timeout: Duration,
    ) -> Result<ExecResult, SandboxError>;
}

/// [`Executor::run_script`] with the positive-timeout precondition checked.
pub fn run_script(
    executor: &dyn Executor,
    workspace: &Workspace,
    code: &str,
    timeout: Duration,
) -> Result<ExecResult, SandboxError> {
    if timeout.is_zero() {
        return Err(SandboxError::InvalidTimeout);
    }
    executor.run_script(workspace, code, timeout)
}
