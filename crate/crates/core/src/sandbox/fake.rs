use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ExecResult, Executor, SandboxError, Session, SyntaxCheck, Workspace};

/// Scripted outcome for any code containing `contains`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FakeRule {
    pub contains: String,
    /// Only match when an earlier fragment in the same session contained this.
    pub requires_prior: Option<String>,
    pub syntax_error: Option<String>,
    pub output: String,
    pub exit_code: i32,
    /// Simulated run time; exceeding the timeout reports a timeout.
    pub duration_secs: f64,
    /// Files (relative to the workspace root) written on execution.
    pub writes: BTreeMap<String, String>,
}

impl FakeRule {
    pub fn new(contains: impl Into<String>) -> Self {
        Self {
            contains: contains.into(),
            ..Self::default()
        }
    }

    pub fn output(mut self, output: impl Into<String>) -> Self {
        self.output = output.into();
        self
    }

    pub fn failing(mut self, exit_code: i32) -> Self {
        self.exit_code = exit_code;
        self
    }

    pub fn syntax_error(mut self, message: impl Into<String>) -> Self {
        self.syntax_error = Some(message.into());
        self
    }

    pub fn after(mut self, prior: impl Into<String>) -> Self {
        self.requires_prior = Some(prior.into());
        self
    }

    pub fn takes(mut self, secs: f64) -> Self {
        self.duration_secs = secs;
        self
    }

    pub fn writes(mut self, path: impl Into<String>, contents: impl Into<String>) -> Self {
        self.writes.insert(path.into(), contents.into());
        self
    }

    fn matches(&self, code: &str, history: &[String]) -> bool {
        code.contains(&self.contains)
            && self
                .requires_prior
                .as_ref()
                .is_none_or(|p| history.iter().any(|h| h.contains(p.as_str())))
    }
}

/// Every call the fake executor received, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FakeCall {
    Open,
    Check(String),
    Exec(String),
    Run(String),
    Close,
}

/// In-process executor answering from a rule table. Unmatched code succeeds
/// silently in zero time.
#[derive(Debug, Clone, Default)]
pub struct FakeExecutor {
    rules: Arc<Vec<FakeRule>>,
    log: Arc<Mutex<Vec<FakeCall>>>,
}

impl FakeExecutor {
    pub fn new(rules: Vec<FakeRule>) -> Self {
        Self {
            rules: Arc::new(rules),
            log: Arc::default(),
        }
    }

    /// Loads a JSON array of rules.
    pub fn from_file(path: &Path) -> Result<Self, SandboxError> {
        let text = fs::read_to_string(path).map_err(|e| SandboxError::io(path, e))?;
        let rules = serde_json::from_str(&text).map_err(|e| {
            SandboxError::io(
                path,
                std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            )
        })?;
        Ok(Self::new(rules))
    }

    pub fn calls(&self) -> Vec<FakeCall> {
        self.log.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    fn push(&self, call: FakeCall) {
        self.log
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(call);
    }

    fn syntax(&self, code: &str) -> SyntaxCheck {
        match self
            .rules
            .iter()
            .find(|r| r.syntax_error.is_some() && code.contains(&r.contains))
        {
            Some(rule) => Err(rule.syntax_error.clone().unwrap_or_default()),
            None => Ok(()),
        }
    }

    fn execute(
        &self,
        root: &Path,
        code: &str,
        history: &[String],
        timeout: Duration,
    ) -> Result<ExecResult, SandboxError> {
        if let Err(message) = self.syntax(code) {
            return Ok(ExecResult::new(
                &format!("SyntaxError: {message}"),
                false,
                0.0,
                false,
            ));
        }
        let Some(rule) = self.rules.iter().find(|r| r.matches(code, history)) else {
            return Ok(ExecResult::new("", true, 0.0, false));
        };
        let limit = timeout.as_secs_f64();
        if rule.duration_secs > limit {
            return Ok(ExecResult::new(&rule.output, false, limit, true));
        }
        for (rel, contents) in &rule.writes {
            let path = root.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| SandboxError::io(parent, e))?;
            }
            fs::write(&path, contents).map_err(|e| SandboxError::io(&path, e))?;
        }
        Ok(ExecResult::new(
            &rule.output,
            rule.exit_code == 0,
            rule.duration_secs,
            false,
        ))
    }
}

struct FakeSession {
    exec: FakeExecutor,
    root: PathBuf,
    history: Vec<String>,
}

impl Session for FakeSession {
    fn check_syntax(&mut self, code: &str) -> Result<SyntaxCheck, SandboxError> {
        self.exec.push(FakeCall::Check(code.to_string()));
        Ok(self.exec.syntax(code))
    }

    fn exec_fragment(&mut self, code: &str, timeout: Duration) -> Result<ExecResult, SandboxError> {
        self.exec.push(FakeCall::Exec(code.to_string()));
        let result = self
            .exec
            .execute(&self.root, code, &self.history, timeout)?;
        if result.succeeded() {
            self.history.push(code.to_string());
        }
        Ok(result)
    }

    fn close(self: Box<Self>) -> Result<(), SandboxError> {
        self.exec.push(FakeCall::Close);
        Ok(())
    }
}

impl Executor for FakeExecutor {
    fn open_session(&self, workspace: &Workspace) -> Result<Box<dyn Session>, SandboxError> {
        self.push(FakeCall::Open);
        Ok(Box::new(FakeSession {
            exec: self.clone(),
            root: workspace.root().to_path_buf(),
            history: Vec::new(),
        }))
    }

    fn run_script(
        &self,
        workspace: &Workspace,
        code: &str,
        timeout: Duration,
    ) -> Result<ExecResult, SandboxError> {
        self.push(FakeCall::Run(code.to_string()));
        self.execute(workspace.root(), code, &[], timeout)
    }
}
