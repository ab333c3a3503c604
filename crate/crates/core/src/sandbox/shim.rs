use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{ExecResult, Executor, SandboxError, Session, SyntaxCheck, Workspace};

/// Extra time granted to the runner beyond the requested timeout before the
/// supervisor kills it.
pub const SHIM_GRACE: Duration = Duration::from_secs(10);

/// Budget for commands that carry no timeout of their own (check, reset, close).
const CONTROL_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShimCommand {
    Check,
    Exec,
    Run,
    Reset,
    Close,
}

/// One request line sent to the runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShimRequest {
    pub request_id: u64,
    pub cmd: ShimCommand,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout: Option<f64>,
}

/// One response line from the runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShimResponse {
    pub request_id: u64,
    pub ok: bool,
    #[serde(default)]
    pub output: String,
    #[serde(default)]
    pub timed_out: bool,
    #[serde(default)]
    pub syntax_error: Option<String>,
}

/// Executor backed by an external runner process speaking the shim protocol
/// on stdin/stdout. One process per session; `run_script` spawns a fresh one.
#[derive(Debug, Clone)]
pub struct ShimExecutor {
    command: Vec<String>,
    grace: Duration,
}

impl ShimExecutor {
    /// `command` is the launch command line, e.g. `["python3", "shim.py"]`.
    pub fn new(command: Vec<String>) -> Result<Self, SandboxError> {
        if command.is_empty() || command[0].trim().is_empty() {
            return Err(SandboxError::ExecutorUnavailable(
                "empty runner command".into(),
            ));
        }
        Ok(Self {
            command,
            grace: SHIM_GRACE,
        })
    }

    /// Parses a whitespace-separated command line.
    pub fn from_command_line(line: &str) -> Result<Self, SandboxError> {
        Self::new(line.split_whitespace().map(str::to_string).collect())
    }

    pub fn with_grace(mut self, grace: Duration) -> Self {
        self.grace = grace;
        self
    }

    fn spawn(&self, workspace: &Workspace) -> Result<ShimSession, SandboxError> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .current_dir(workspace.root())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| {
                SandboxError::ExecutorUnavailable(format!(
                    "cannot launch `{}`: {e}",
                    self.command[0]
                ))
            })?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ShimSession {
            child,
            stdin: Some(stdin),
            lines: rx,
            next_id: 1,
            grace: self.grace,
            lost: None,
        })
    }
}

struct ShimSession {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
    next_id: u64,
    grace: Duration,
    lost: Option<String>,
}

enum Reply {
    Response(ShimResponse),
    /// The supervisor deadline passed; the runner has been killed.
    Killed,
}

impl ShimSession {
    fn send(
        &mut self,
        cmd: ShimCommand,
        code: Option<&str>,
        timeout: Option<Duration>,
    ) -> Result<Reply, SandboxError> {
        if let Some(why) = &self.lost {
            return Err(SandboxError::SessionLost(why.clone()));
        }
        let request = ShimRequest {
            request_id: self.next_id,
            cmd,
            code: code.map(str::to_string),
            timeout: timeout.map(|t| t.as_secs_f64()),
        };
        self.next_id += 1;
        let mut line = serde_json::to_string(&request).expect("request serializes");
        line.push('\n');
        let stdin = self.stdin.as_mut().expect("stdin open while session alive");
        if let Err(e) = stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()) {
            return Err(self.mark_lost(format!("runner stdin closed: {e}")));
        }

        let deadline = Instant::now() + timeout.unwrap_or(CONTROL_TIMEOUT) + self.grace;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(remaining) {
                Ok(line) => match serde_json::from_str::<ShimResponse>(&line) {
                    Ok(resp) if resp.request_id == request.request_id => {
                        return Ok(Reply::Response(resp))
                    }
                    Ok(stale) => warn!(id = stale.request_id, "ignoring stale runner response"),
                    Err(e) => warn!(%e, line, "ignoring undecodable runner line"),
                },
                Err(RecvTimeoutError::Timeout) => {
                    let _ = self.child.kill();
                    let _ = self.child.wait();
                    self.lost = Some("runner killed after exceeding its deadline".into());
                    return Ok(Reply::Killed);
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(self.mark_lost("runner exited".into()));
                }
            }
        }
    }

    fn mark_lost(&mut self, why: String) -> SandboxError {
        let _ = self.child.kill();
        let _ = self.child.wait();
        self.lost = Some(why.clone());
        SandboxError::SessionLost(why)
    }

    fn execute(
        &mut self,
        cmd: ShimCommand,
        code: &str,
        timeout: Duration,
    ) -> Result<ExecResult, SandboxError> {
        let started = Instant::now();
        let reply = self.send(cmd, Some(code), Some(timeout))?;
        let elapsed = started.elapsed().as_secs_f64();
        Ok(match reply {
            Reply::Response(r) => {
                let mut output = r.output;
                if let Some(err) = r.syntax_error {
                    output.push_str(&err);
                }
                ExecResult::new(&output, r.ok, elapsed, r.timed_out)
            }
            Reply::Killed => ExecResult::new(
                "[execution killed by supervisor after exceeding the timeout]",
                false,
                elapsed,
                true,
            ),
        })
    }

    fn shutdown(&mut self) {
        if self.lost.is_none() {
            let _ = self.send(ShimCommand::Close, None, Some(Duration::from_secs(1)));
        }
        self.stdin.take();
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ShimSession {
    fn drop(&mut self) {
        if self.stdin.is_some() {
            self.shutdown();
        }
    }
}

impl Session for ShimSession {
    fn check_syntax(&mut self, code: &str) -> Result<SyntaxCheck, SandboxError> {
        match self.send(ShimCommand::Check, Some(code), None)? {
            Reply::Response(r) => Ok(match (r.ok, r.syntax_error) {
                (_, Some(err)) => Err(err),
                (true, None) => Ok(()),
                (false, None) => Err(r.output),
            }),
            Reply::Killed => Err(SandboxError::SessionLost(
                "runner did not answer a syntax check".into(),
            )),
        }
    }

    fn exec_fragment(&mut self, code: &str, timeout: Duration) -> Result<ExecResult, SandboxError> {
        self.execute(ShimCommand::Exec, code, timeout)
    }

    fn close(mut self: Box<Self>) -> Result<(), SandboxError> {
        self.shutdown();
        Ok(())
    }
}

impl Executor for ShimExecutor {
    fn open_session(&self, workspace: &Workspace) -> Result<Box<dyn Session>, SandboxError> {
        Ok(Box::new(self.spawn(workspace)?))
    }

    fn run_script(
        &self,
        workspace: &Workspace,
        code: &str,
        timeout: Duration,
    ) -> Result<ExecResult, SandboxError> {
        let mut session = self.spawn(workspace)?;
        let result = session.execute(ShimCommand::Run, code, timeout);
        session.shutdown();
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::prepare_workspace;
    use std::path::Path;

    /// A stand-in runner written in POSIX shell: answers every request with a
    /// canned response, reports a syntax error for `x = (`, and hangs on
    /// code containing `hang`.
    const MOCK_RUNNER: &str = r#"
while IFS= read -r line; do
  id=$(printf '%s' "$line" | sed -E 's/.*"request_id":([0-9]+).*/\1/')
  case "$line" in
    *'"cmd":"close"'*)
      printf '{"request_id":%s,"ok":true,"output":"","timed_out":false,"syntax_error":null}\n' "$id"
      exit 0 ;;
    *hang*) sleep 30 ;;
    *'x = ('*)
      printf '{"request_id":%s,"ok":false,"output":"","timed_out":false,"syntax_error":"unbalanced"}\n' "$id" ;;
    *'"cmd":"run"'*)
      printf 'noise that is not json\n'
      printf '{"request_id":%s,"ok":true,"output":"ran in %s\\n","timed_out":false,"syntax_error":null}\n' "$id" "$(pwd)" ;;
    *)
      printf '{"request_id":%s,"ok":true,"output":"pong %s\\n","timed_out":false,"syntax_error":null}\n' "$id" "$id" ;;
  esac
done
"#;

    fn setup(dir: &Path) -> (ShimExecutor, Workspace) {
        let script = dir.join("mock_runner.sh");
        std::fs::write(&script, MOCK_RUNNER).unwrap();
        let data = dir.join("data");
        std::fs::create_dir_all(&data).unwrap();
        let ws = prepare_workspace(&data, &dir.join("ws")).unwrap();
        let exec = ShimExecutor::new(vec!["sh".into(), script.display().to_string()])
            .unwrap()
            .with_grace(Duration::from_millis(500));
        (exec, ws)
    }

    #[test]
    fn wire_format_is_single_line_json() {
        let req = ShimRequest {
            request_id: 7,
            cmd: ShimCommand::Exec,
            code: Some("print(1)\nprint(2)".into()),
            timeout: Some(5.0),
        };
        let line = serde_json::to_string(&req).unwrap();
        assert_eq!(
            line,
            r#"{"request_id":7,"cmd":"exec","code":"print(1)\nprint(2)","timeout":5.0}"#
        );
        let close = serde_json::to_string(&ShimRequest {
            request_id: 8,
            cmd: ShimCommand::Close,
            code: None,
            timeout: None,
        })
        .unwrap();
        assert_eq!(close, r#"{"request_id":8,"cmd":"close"}"#);
        let resp: ShimResponse = serde_json::from_str(
            r#"{"request_id":7,"ok":true,"output":"1\n","timed_out":false,"syntax_error":null}"#,
        )
        .unwrap();
        assert_eq!(resp.output, "1\n");
    }

    #[test]
    fn session_round_trips_requests() {
        let dir = tempfile::tempdir().unwrap();
        let (exec, ws) = setup(dir.path());
        let mut session = exec.open_session(&ws).unwrap();
        assert_eq!(session.check_syntax("a = 1").unwrap(), Ok(()));
        assert_eq!(
            session.check_syntax("x = (").unwrap(),
            Err("unbalanced".to_string())
        );
        let r = session
            .exec_fragment("a = 2", Duration::from_secs(5))
            .unwrap();
        assert!(r.exit_ok);
        assert_eq!(r.output, "pong 3\n");
        session.close().unwrap();
    }

    #[test]
    fn run_script_uses_workspace_root_and_skips_noise() {
        let dir = tempfile::tempdir().unwrap();
        let (exec, ws) = setup(dir.path());
        let r = exec
            .run_script(&ws, "print(1)", Duration::from_secs(5))
            .unwrap();
        assert!(r.exit_ok);
        let root = ws.root().canonicalize().unwrap();
        assert!(
            r.output.contains(&root.display().to_string()),
            "{}",
            r.output
        );
    }

    #[test]
    fn supervisor_kills_unresponsive_runner() {
        let dir = tempfile::tempdir().unwrap();
        let (exec, ws) = setup(dir.path());
        let mut session = exec.open_session(&ws).unwrap();
        let started = Instant::now();
        let r = session
            .exec_fragment("hang()", Duration::from_secs(1))
            .unwrap();
        assert!(r.timed_out);
        assert!(!r.exit_ok);
        assert!(started.elapsed() < Duration::from_secs(5));
        assert!(matches!(
            session.exec_fragment("a = 1", Duration::from_secs(1)),
            Err(SandboxError::SessionLost(_))
        ));
    }

    #[test]
    fn missing_binary_is_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let (_, ws) = setup(dir.path());
        let exec = ShimExecutor::new(vec!["/nonexistent/runner".into()]).unwrap();
        assert!(matches!(
            exec.run_script(&ws, "x", Duration::from_secs(1)),
            Err(SandboxError::ExecutorUnavailable(_))
        ));
        assert!(ShimExecutor::new(vec![]).is_err());
    }

    /// Runs the shared contract suite against a real runner when
    /// `AUTOMIND_RUNNER_CMD` names one.
    #[test]
    #[ignore = "needs an external runner; set AUTOMIND_RUNNER_CMD"]
    fn live_runner_passes_executor_contract() {
        let cmd = std::env::var("AUTOMIND_RUNNER_CMD").expect("AUTOMIND_RUNNER_CMD");
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        std::fs::create_dir_all(&data).unwrap();
        let ws = prepare_workspace(&data, &dir.path().join("ws")).unwrap();
        let exec = ShimExecutor::from_command_line(&cmd).unwrap();
        crate::sandbox::contract::state_is_retained(&exec, &ws);
        crate::sandbox::contract::failed_check_leaves_state_alone(&exec, &ws);
        crate::sandbox::contract::busy_loop_times_out(&exec, &ws);
        crate::sandbox::contract::prints_metric(&exec, &ws);
        crate::sandbox::contract::submission_is_visible(&exec, &ws);
    }
}
