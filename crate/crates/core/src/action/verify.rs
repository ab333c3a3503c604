use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::llm::{ChatRequest, Gateway, LlmError, Message, Role};
use crate::prompts::{submission_verify_tool, Template};
use crate::sandbox::{Artifacts, ExecResult};

const TOOL_CORRECTION: &str = "Your previous reply did not follow the required format. Call the submission_verify tool exactly once, giving is_bug, is_overfitting, has_csv_submission, summary, metric and lower_is_better.";

/// The verifier's judgement after the execution facts have been applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub is_bug: bool,
    pub is_overfitting: bool,
    pub has_csv_submission: bool,
    pub summary: String,
    pub metric: Option<f64>,
    pub lower_is_better: bool,
    /// Reasons the verdict was forced to buggy despite the model's answer.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<String>,
    /// True when the model never produced a usable tool call.
    #[serde(default)]
    pub synthetic: bool,
}

impl Verdict {
    fn unusable(reason: &str) -> Self {
        Self {
            is_bug: true,
            is_overfitting: false,
            has_csv_submission: false,
            summary: format!("verifier response unusable: {reason}"),
            metric: None,
            lower_is_better: false,
            overrides: Vec::new(),
            synthetic: true,
        }
    }

    /// Summary with any override reasons appended.
    pub fn full_summary(&self) -> String {
        if self.overrides.is_empty() {
            self.summary.clone()
        } else {
            format!(
                "{} [forced buggy: {}]",
                self.summary,
                self.overrides.join("; ")
            )
        }
    }
}

fn parse_verdict(args: &Value) -> Result<Verdict, String> {
    let flag = |key: &str| {
        args.get(key)
            .and_then(Value::as_bool)
            .ok_or_else(|| format!("`{key}` must be a boolean"))
    };
    let summary = args
        .get("summary")
        .and_then(Value::as_str)
        .ok_or("`summary` must be a string")?;
    let metric = match args.get("metric") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_f64().ok_or("`metric` must be a number or null")?),
    };
    Ok(Verdict {
        is_bug: flag("is_bug")?,
        is_overfitting: flag("is_overfitting")?,
        has_csv_submission: flag("has_csv_submission")?,
        summary: summary.trim().to_string(),
        metric,
        lower_is_better: flag("lower_is_better")?,
        overrides: Vec::new(),
        synthetic: false,
    })
}

/// One verifier call. `Ok(Err(reason))` means the reply was unusable.
fn attempt(llm: &Gateway, request: &ChatRequest) -> Result<Result<Verdict, String>, LlmError> {
    match llm.complete(request) {
        Ok(reply) => Ok(match &reply.tool_arguments {
            Some(args) => parse_verdict(args),
            None => Err("reply was text, not a tool call".into()),
        }),
        Err(LlmError::SchemaViolation(reason)) => Ok(Err(reason)),
        Err(e) => Err(e),
    }
}

/// Asks the verifier to judge an execution, reprompting once on a malformed
/// reply, then forces the verdict to buggy wherever the execution facts
/// contradict it.
pub fn verify_output(
    task_description: &str,
    code: &str,
    exec: &ExecResult,
    artifacts: &Artifacts,
    llm: &Gateway,
) -> Result<Verdict, LlmError> {
    let prompt = Template::Verify
        .render(&[
            ("task_description", task_description),
            ("code", code),
            ("execution_output", &exec.output),
        ])
        .expect("verify template takes a fixed set of values");
    let mut request =
        ChatRequest::prompt(Role::Verifier, prompt).with_tool(submission_verify_tool());
    let verdict = match attempt(llm, &request)? {
        Ok(v) => v,
        Err(reason) => {
            tracing::warn!(%reason, "verifier reply unusable; reprompting once");
            request
                .messages
                .push(Message::assistant(format!("(invalid reply: {reason})")));
            request.messages.push(Message::user(TOOL_CORRECTION));
            attempt(llm, &request)?.unwrap_or_else(|reason| Verdict::unusable(&reason))
        }
    };
    Ok(apply_overrides(verdict, exec, artifacts))
}

/// Execution facts win over the model: a timeout, a failed exit, a missing
/// submission file or a missing finite metric all make the node buggy.
pub fn apply_overrides(mut verdict: Verdict, exec: &ExecResult, artifacts: &Artifacts) -> Verdict {
    if exec.timed_out {
        verdict.overrides.push("execution timed out".into());
    } else if !exec.exit_ok {
        verdict
            .overrides
            .push("execution exited with an error".into());
    }
    if !artifacts.has_submission {
        verdict
            .overrides
            .push("./submission/submission.csv was not produced".into());
    }
    verdict.has_csv_submission = artifacts.has_submission;
    if !verdict.is_bug && !verdict.metric.is_some_and(f64::is_finite) {
        verdict
            .overrides
            .push("no finite validation metric was reported".into());
    }
    if !verdict.overrides.is_empty() {
        verdict.is_bug = true;
    }
    if verdict.is_bug {
        verdict.metric = None;
    }
    verdict
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ChatResponse, FnBackend, RoleModelConfig};
    use serde_json::json;
    use std::collections::VecDeque;
    use std::sync::{Arc, Mutex};

    fn gateway(replies: Vec<ChatResponse>) -> (Gateway, Arc<Mutex<Vec<ChatRequest>>>) {
        let queue = Arc::new(Mutex::new(VecDeque::from(replies)));
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        let gw = Gateway::new(
            RoleModelConfig::default(),
            FnBackend(move |req: &ChatRequest| {
                log.lock().unwrap().push(req.clone());
                Ok(queue.lock().unwrap().pop_front().expect("script exhausted"))
            }),
        );
        (gw, seen)
    }

    fn good_args(metric: Value) -> Value {
        json!({
            "is_bug": false, "is_overfitting": false, "has_csv_submission": true,
            "summary": "AUC 0.91 on validation.", "metric": metric, "lower_is_better": false
        })
    }

    fn ok_exec() -> ExecResult {
        ExecResult::new("AUC 0.91", true, 1.0, false)
    }

    fn with_submission() -> Artifacts {
        Artifacts {
            has_submission: true,
            eval_metric_text: None,
        }
    }

    #[test]
    fn clean_run_is_accepted() {
        let (gw, seen) = gateway(vec![ChatResponse::tool_call(
            "submission_verify",
            good_args(json!(0.91)),
        )]);
        let v = verify_output("t", "print(1)", &ok_exec(), &with_submission(), &gw).unwrap();
        assert!(!v.is_bug);
        assert_eq!(v.metric, Some(0.91));
        let req = &seen.lock().unwrap()[0];
        assert_eq!(req.role, Role::Verifier);
        assert_eq!(req.tool_schema.as_ref().unwrap().name, "submission_verify");
    }

    #[test]
    fn execution_facts_override_the_model() {
        let cases = [
            (
                ExecResult::new("", false, 1.0, true),
                with_submission(),
                "timed out",
            ),
            (
                ExecResult::new("Traceback", false, 1.0, false),
                with_submission(),
                "exited",
            ),
            (
                ok_exec(),
                Artifacts {
                    has_submission: false,
                    eval_metric_text: None,
                },
                "submission.csv",
            ),
        ];
        for (exec, art, why) in cases {
            let (gw, _) = gateway(vec![ChatResponse::tool_call(
                "submission_verify",
                good_args(json!(0.9)),
            )]);
            let v = verify_output("t", "c", &exec, &art, &gw).unwrap();
            assert!(v.is_bug, "{why}");
            assert!(v.metric.is_none());
            assert!(v.full_summary().contains(why), "{}", v.full_summary());
        }
    }

    #[test]
    fn null_metric_forces_buggy() {
        let (gw, _) = gateway(vec![ChatResponse::tool_call(
            "submission_verify",
            good_args(Value::Null),
        )]);
        let v = verify_output("t", "c", &ok_exec(), &with_submission(), &gw).unwrap();
        assert!(v.is_bug);
        assert!(v.overrides[0].contains("metric"));
    }

    #[test]
    fn malformed_reply_is_reprompted_then_synthesized() {
        let (gw, seen) = gateway(vec![
            ChatResponse::text("looks fine"),
            ChatResponse::tool_call("submission_verify", good_args(json!(0.5))),
        ]);
        let v = verify_output("t", "c", &ok_exec(), &with_submission(), &gw).unwrap();
        assert_eq!(v.metric, Some(0.5));
        assert_eq!(seen.lock().unwrap()[1].messages.len(), 3);

        let (gw, _) = gateway(vec![
            ChatResponse::tool_call("submission_verify", json!({"is_bug": false})),
            ChatResponse::text("still wrong"),
        ]);
        let v = verify_output("t", "c", &ok_exec(), &with_submission(), &gw).unwrap();
        assert!(v.synthetic);
        assert!(v.is_bug);
    }

    #[test]
    fn null_flag_is_a_violation() {
        let mut args = good_args(json!(1.0));
        args["is_bug"] = Value::Null;
        assert!(parse_verdict(&args).is_err());
    }
}
