//! Self-adaptive coding: score a plan's complexity, then either write the
//! whole script in one completion or decompose the plan and build the script
//! substep by substep in a live session, retrying failed substeps with the
//! error as feedback.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::{info, warn};

use crate::llm::{ChatRequest, Gateway, LlmError, Message, Role};
use crate::prompts::Template;
use crate::sandbox::{ExecResult, Executor, SandboxError, Session, Workspace};
use crate::text::{fenced_blocks, strip_trailing_commas, tag_content};

/// Fallback when the scorer never produces a usable score.
pub const DEFAULT_SCORE: f64 = 3.0;

#[derive(Debug, Error)]
pub enum CoderError {
    #[error("could not parse {what}: {reason}")]
    ParseFailure { what: &'static str, reason: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoderConfig {
    pub complexity_threshold: f64,
    pub retry_limit: u32,
    pub max_steps: usize,
}

impl Default for CoderConfig {
    fn default() -> Self {
        Self {
            complexity_threshold: 3.0,
            retry_limit: 3,
            max_steps: 12,
        }
    }
}

impl CoderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(1.0..=5.0).contains(&self.complexity_threshold) {
            return Err(format!(
                "complexity_threshold must be in [1, 5], got {}",
                self.complexity_threshold
            ));
        }
        if self.retry_limit == 0 {
            return Err("retry_limit must be at least 1".into());
        }
        if self.max_steps == 0 {
            return Err("max_steps must be at least 1".into());
        }
        Ok(())
    }
}

/// A complexity rating in [1, 5] on the half-point grid.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ComplexityScore(f64);

impl ComplexityScore {
    pub fn new(value: f64) -> Option<Self> {
        let on_grid = (value * 2.0).fract() == 0.0;
        ((1.0..=5.0).contains(&value) && on_grid).then_some(Self(value))
    }

    /// Snaps to the nearest half point when within 0.05 of it.
    pub fn snapped(value: f64) -> Option<Self> {
        if !value.is_finite() {
            return None;
        }
        let nearest = (value * 2.0).round() / 2.0;
        if (value - nearest).abs() <= 0.05 + 1e-9 {
            Self::new(nearest)
        } else {
            None
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    OnePass,
    Stepwise,
}

/// Scores below the threshold go one-pass; the threshold itself and above go
/// stepwise.
pub fn route(score: ComplexityScore, config: &CoderConfig) -> Route {
    if score.value() < config.complexity_threshold {
        Route::OnePass
    } else {
        Route::Stepwise
    }
}

/// Text shared by every coding prompt.
#[derive(Debug, Clone, Copy)]
pub struct CodingInputs<'a> {
    pub task_description: &'a str,
    pub data_analysis: &'a str,
    pub packages: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOutcome {
    pub score: ComplexityScore,
    /// True when the scorer failed twice and the default was used.
    pub defaulted: bool,
}

fn reprompt(first: &ChatRequest, reply: &str, correction: &str) -> ChatRequest {
    let mut request = first.clone();
    request.messages.push(Message::assistant(reply));
    request.messages.push(Message::user(correction));
    request
}

fn parse_score(reply: &str) -> Result<ComplexityScore, String> {
    let raw = tag_content(reply, "score").ok_or("no <score></score> tag")?;
    let value: f64 = raw
        .parse()
        .map_err(|_| format!("`{raw}` is not a number"))?;
    ComplexityScore::snapped(value)
        .ok_or_else(|| format!("{value} is not a half-point score between 1 and 5"))
}

pub fn score_complexity(
    inputs: CodingInputs<'_>,
    plan: &str,
    llm: &Gateway,
) -> Result<ScoreOutcome, CoderError> {
    let prompt = Template::ComplexityScore
        .render(&[
            ("task_description", inputs.task_description),
            ("proposed_solution", plan),
            ("data_analysis", inputs.data_analysis),
        ])
        .expect("complexity template fields");
    let request = ChatRequest::prompt(Role::Coder, prompt);
    let reply = llm.complete(&request)?;
    let reason = match parse_score(reply.content()) {
        Ok(score) => {
            return Ok(ScoreOutcome {
                score,
                defaulted: false,
            })
        }
        Err(reason) => reason,
    };
    let retry = reprompt(
        &request,
        reply.content(),
        &format!(
            "Your score could not be used ({reason}). Respond with ONLY ONE average complexity score as a floating point number between 1 and 5 in steps of 0.5, wrapped in <score></score>."
        ),
    );
    let reply = llm.complete(&retry)?;
    match parse_score(reply.content()) {
        Ok(score) => Ok(ScoreOutcome {
            score,
            defaulted: false,
        }),
        Err(reason) => {
            warn!(%reason, "complexity scoring failed twice; using the default score");
            Ok(ScoreOutcome {
                score: ComplexityScore(DEFAULT_SCORE),
                defaulted: true,
            })
        }
    }
}

fn single_block(reply: &str) -> Result<String, String> {
    let blocks = fenced_blocks(reply);
    match blocks.len() {
        1 => Ok(blocks.into_iter().next().expect("one block")),
        0 => Err("the response has no fenced code block".into()),
        n => Err(format!(
            "the response has {n} fenced code blocks, expected exactly one"
        )),
    }
}

pub fn code_one_pass(
    inputs: CodingInputs<'_>,
    plan: &str,
    llm: &Gateway,
) -> Result<String, CoderError> {
    let prompt = Template::CodeOnePass
        .render(&[
            ("task_description", inputs.task_description),
            ("proposed_solution", plan),
            ("data_analysis", inputs.data_analysis),
            ("packages", inputs.packages),
        ])
        .expect("one-pass template fields");
    let request = ChatRequest::prompt(Role::Coder, prompt);
    let reply = llm.complete(&request)?;
    let reason = match single_block(reply.content()) {
        Ok(code) => return Ok(code),
        Err(reason) => reason,
    };
    let retry = reprompt(
        &request,
        reply.content(),
        &format!("{reason}. Your response should only contain a single code block."),
    );
    let reply = llm.complete(&retry)?;
    single_block(reply.content()).map_err(|reason| CoderError::ParseFailure {
        what: "one-pass code",
        reason,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub step: String,
    pub details: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepPlan {
    pub steps: Vec<Step>,
}

fn parse_steps(reply: &str) -> Result<Vec<Step>, String> {
    let blocks = fenced_blocks(reply);
    let raw = match blocks.first() {
        Some(b) => b.clone(),
        None => match (reply.find('{'), reply.rfind('}')) {
            (Some(s), Some(e)) if s < e => reply[s..=e].to_string(),
            _ => return Err("no JSON object in the response".into()),
        },
    };
    let value: Value = serde_json::from_str(&strip_trailing_commas(&raw))
        .map_err(|e| format!("invalid JSON: {e}"))?;
    let items = value
        .get("decomposed steps")
        .or_else(|| value.get("decomposed_steps"))
        .and_then(Value::as_array)
        .ok_or("missing `decomposed steps` array")?;
    if items.is_empty() {
        return Err("`decomposed steps` is empty".into());
    }
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let field = |k: &str| {
                item.get(k)
                    .and_then(Value::as_str)
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .ok_or_else(|| format!("step {} lacks a non-empty `{k}`", i + 1))
            };
            Ok(Step {
                step: field("step")?,
                details: field("details")?,
            })
        })
        .collect()
}

/// Caps a step list at `max` by folding the overflow into the last kept step.
pub fn merge_steps(mut steps: Vec<Step>, max: usize) -> Vec<Step> {
    if steps.len() <= max || max == 0 {
        return steps;
    }
    let tail = steps.split_off(max - 1);
    steps.push(Step {
        step: tail
            .iter()
            .map(|s| s.step.as_str())
            .collect::<Vec<_>>()
            .join(" / "),
        details: tail
            .iter()
            .map(|s| s.details.as_str())
            .collect::<Vec<_>>()
            .join("\n\n"),
    });
    steps
}

pub fn decompose(
    inputs: CodingInputs<'_>,
    plan: &str,
    llm: &Gateway,
    max_steps: usize,
) -> Result<StepPlan, CoderError> {
    let prompt = Template::Decompose
        .render(&[
            ("task_description", inputs.task_description),
            ("proposed_solution", plan),
        ])
        .expect("decompose template fields");
    let request = ChatRequest::prompt(Role::Coder, prompt);
    let reply = llm.complete(&request)?;
    let steps = match parse_steps(reply.content()) {
        Ok(steps) => steps,
        Err(reason) => {
            let retry = reprompt(
                &request,
                reply.content(),
                &format!(
                    "Your decomposition could not be parsed ({reason}). Respond with a single JSON code block of the form {{\"decomposed steps\": [{{\"step\": \"...\", \"details\": \"...\"}}]}}."
                ),
            );
            let reply = llm.complete(&retry)?;
            parse_steps(reply.content()).map_err(|reason| CoderError::ParseFailure {
                what: "step decomposition",
                reason,
            })?
        }
    };
    Ok(StepPlan {
        steps: merge_steps(steps, max_steps),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstepOutcome {
    Passed,
    Abandoned,
}

/// Per-substep record kept in the journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstepLog {
    /// 1-based.
    pub step_index: usize,
    pub attempts: u32,
    pub outcome: SubstepOutcome,
    /// Execution time of the substep's fragments, as reported by the sandbox.
    pub duration_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepwiseOutcome {
    Completed {
        script: String,
    },
    /// Substep `substep` (1-based) exhausted its retries.
    Abandoned {
        substep: usize,
        error: String,
        /// Accepted fragments followed by the last failed candidate.
        partial_code: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepwiseRun {
    pub outcome: StepwiseOutcome,
    pub logs: Vec<SubstepLog>,
    /// Fragment outputs in execution order.
    pub output: String,
    pub duration_secs: f64,
    /// Code-generation completions issued.
    pub generations: u32,
}

enum Attempt {
    Accepted {
        code: String,
        output: String,
    },
    Rejected {
        candidate: Option<String>,
        error: String,
    },
    Lost(String),
}

/// Builds the script one substep at a time inside `session`. Each candidate
/// is syntax-checked together with the accepted prefix, then executed; a
/// failure is fed back into the next generation for that substep.
pub fn code_stepwise(
    inputs: CodingInputs<'_>,
    plan: &StepPlan,
    session: &mut dyn Session,
    llm: &Gateway,
    config: &CoderConfig,
    timeout: Duration,
) -> Result<StepwiseRun, CoderError> {
    let mut total_secs = 0.0;
    let mut accepted: Vec<String> = Vec::new();
    let mut logs = Vec::new();
    let mut output = String::new();
    let mut generations = 0;

    for (i, step) in plan.steps.iter().enumerate() {
        let mut step_secs = 0.0;
        let prev_steps = if accepted.is_empty() {
            "# (no previous steps)".to_string()
        } else {
            accepted.join("\n\n")
        };
        let base = Template::CodeStepwise
            .render(&[
                ("task_description", inputs.task_description),
                ("current_step", &format!("{}: {}", step.step, step.details)),
                ("prev_steps", &prev_steps),
                ("data_analysis", inputs.data_analysis),
                ("packages", inputs.packages),
            ])
            .expect("stepwise template fields");

        let mut feedback: Option<(Option<String>, String)> = None;
        let mut attempts = 0;
        let mut done = None;
        while attempts < config.retry_limit {
            attempts += 1;
            generations += 1;
            let prompt = match &feedback {
                None => base.clone(),
                Some((candidate, error)) => with_feedback(&base, candidate.as_deref(), error),
            };
            let reply = llm.complete(&ChatRequest::prompt(Role::Coder, prompt))?;
            match attempt(
                reply.content(),
                &prev_steps,
                accepted.is_empty(),
                session,
                timeout,
                &mut step_secs,
            ) {
                Attempt::Accepted { code, output: out } => {
                    output.push_str(&out);
                    done = Some(code);
                    break;
                }
                Attempt::Rejected { candidate, error } => {
                    info!(substep = i + 1, attempts, "substep attempt failed");
                    feedback = Some((candidate, error));
                }
                Attempt::Lost(why) => {
                    feedback = Some((None, format!("execution session lost: {why}")));
                    break;
                }
            }
        }
        let duration_secs = step_secs;
        total_secs += step_secs;
        match done {
            Some(code) => {
                accepted.push(code);
                logs.push(SubstepLog {
                    step_index: i + 1,
                    attempts,
                    outcome: SubstepOutcome::Passed,
                    duration_secs,
                });
            }
            None => {
                let (candidate, error) = feedback.unwrap_or((None, "no attempts made".into()));
                logs.push(SubstepLog {
                    step_index: i + 1,
                    attempts,
                    outcome: SubstepOutcome::Abandoned,
                    duration_secs,
                });
                let mut partial = accepted.clone();
                partial.extend(candidate);
                output.push_str(&error);
                return Ok(StepwiseRun {
                    outcome: StepwiseOutcome::Abandoned {
                        substep: i + 1,
                        error,
                        partial_code: partial.join("\n\n"),
                    },
                    logs,
                    output,
                    duration_secs: total_secs,
                    generations,
                });
            }
        }
    }
    Ok(StepwiseRun {
        outcome: StepwiseOutcome::Completed {
            script: accepted.join("\n\n"),
        },
        logs,
        output,
        duration_secs: total_secs,
        generations,
    })
}

fn with_feedback(base: &str, candidate: Option<&str>, error: &str) -> String {
    let mut prompt = base.trim_end().to_string();
    prompt.push_str("\n\n# Failed Last Try\n\n");
    if let Some(code) = candidate {
        prompt.push_str("```python\n");
        prompt.push_str(code);
        prompt.push_str("\n```\n\n");
    }
    prompt.push_str("## Error\n\n");
    prompt.push_str(error.trim());
    prompt.push('\n');
    prompt
}

fn attempt(
    reply: &str,
    prev_steps: &str,
    first: bool,
    session: &mut dyn Session,
    timeout: Duration,
    spent_secs: &mut f64,
) -> Attempt {
    let code = match single_block(reply) {
        Ok(code) => code,
        Err(error) => {
            return Attempt::Rejected {
                candidate: None,
                error,
            }
        }
    };
    let combined = if first {
        code.clone()
    } else {
        format!("{prev_steps}\n\n{code}")
    };
    match session.check_syntax(&combined) {
        Ok(Ok(())) => {}
        Ok(Err(error)) => {
            return Attempt::Rejected {
                candidate: Some(code),
                error: format!("Syntax error: {error}"),
            }
        }
        Err(e) => return Attempt::Lost(e.to_string()),
    }
    let result = session.exec_fragment(&code, timeout);
    if let Ok(r) = &result {
        *spent_secs += r.duration_secs;
    }
    match result {
        Ok(r) if r.succeeded() => Attempt::Accepted {
            code,
            output: r.output,
        },
        Ok(r) => {
            let error = if r.timed_out {
                format!("{}\nExecution timed out.", r.output)
            } else {
                r.output
            };
            Attempt::Rejected {
                candidate: Some(code),
                error,
            }
        }
        Err(e) => Attempt::Lost(e.to_string()),
    }
}

/// Journal record of how a node's code was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodingLog {
    pub strategy: Route,
    pub complexity: f64,
    pub complexity_defaulted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
    #[serde(default)]
    pub substeps: Vec<SubstepLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Abandonment {
    /// 1-based.
    pub substep: usize,
    pub error: String,
}

/// Code for a plan plus the result of running it.
#[derive(Debug, Clone, PartialEq)]
pub struct Implementation {
    pub code: String,
    pub exec: ExecResult,
    pub abandoned: Option<Abandonment>,
    pub log: CodingLog,
}

/// Scores, routes, writes and executes code for `plan`. One-pass scripts run
/// via `run_script`; stepwise scripts are executed fragment by fragment in a
/// session and are not re-run after integration.
pub fn implement(
    inputs: CodingInputs<'_>,
    plan: &str,
    llm: &Gateway,
    executor: &dyn Executor,
    workspace: &Workspace,
    config: &CoderConfig,
    timeout: Duration,
) -> Result<Implementation, CoderError> {
    let scored = score_complexity(inputs, plan, llm)?;
    let mut log = CodingLog {
        strategy: route(scored.score, config),
        complexity: scored.score.value(),
        complexity_defaulted: scored.defaulted,
        fallback: None,
        substeps: Vec::new(),
    };

    if log.strategy == Route::Stepwise {
        match decompose(inputs, plan, llm, config.max_steps) {
            Ok(steps) => {
                let mut session = executor.open_session(workspace)?;
                let run = code_stepwise(inputs, &steps, session.as_mut(), llm, config, timeout);
                if let Err(e) = session.close() {
                    warn!(%e, "closing the stepwise session failed");
                }
                let run = run?;
                log.substeps = run.logs;
                return Ok(match run.outcome {
                    StepwiseOutcome::Completed { script } => Implementation {
                        code: script,
                        exec: ExecResult::new(&run.output, true, run.duration_secs, false),
                        abandoned: None,
                        log,
                    },
                    StepwiseOutcome::Abandoned {
                        substep,
                        error,
                        partial_code,
                    } => Implementation {
                        code: partial_code,
                        exec: ExecResult::new(&run.output, false, run.duration_secs, false),
                        abandoned: Some(Abandonment { substep, error }),
                        log,
                    },
                });
            }
            Err(CoderError::ParseFailure { reason, .. }) => {
                warn!(%reason, "decomposition failed; falling back to one-pass coding");
                log.fallback = Some(format!("decomposition failed: {reason}"));
            }
            Err(e) => return Err(e),
        }
    }

    let code = code_one_pass(inputs, plan, llm)?;
    let exec = crate::sandbox::run_script(executor, workspace, &code, timeout)?;
    Ok(Implementation {
        code,
        exec,
        abandoned: None,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ChatResponse, FnBackend, RoleModelConfig};
    use crate::sandbox::{prepare_workspace, FakeCall, FakeExecutor, FakeRule};
    use std::sync::{Arc, Mutex};

    const INPUTS: CodingInputs<'static> = CodingInputs {
        task_description: "predict y",
        data_analysis: "train.csv",
        packages: "'numpy'",
    };

    /// Gateway answering from a queue and recording every prompt.
    fn scripted(replies: &[&str]) -> (Gateway, Arc<Mutex<Vec<ChatRequest>>>) {
        let queue = Arc::new(Mutex::new(
            replies
                .iter()
                .map(|s| s.to_string())
                .collect::<std::collections::VecDeque<_>>(),
        ));
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        let backend = FnBackend(move |req: &ChatRequest| {
            log.lock().unwrap().push(req.clone());
            let next = queue.lock().unwrap().pop_front().expect("script exhausted");
            Ok(ChatResponse::text(next))
        });
        (Gateway::new(RoleModelConfig::default(), backend), seen)
    }

    fn code(body: &str) -> String {
        format!("<think>ok</think>\n```python\n{body}\n```")
    }

    fn workspace(dir: &std::path::Path) -> Workspace {
        let data = dir.join("data");
        std::fs::create_dir_all(&data).unwrap();
        prepare_workspace(&data, &dir.join("ws")).unwrap()
    }

    #[test]
    fn routing_boundary() {
        let cfg = CoderConfig::default();
        let r = |v| route(ComplexityScore::new(v).unwrap(), &cfg);
        assert_eq!(r(2.0), Route::OnePass);
        assert_eq!(r(2.5), Route::OnePass);
        assert_eq!(r(3.0), Route::Stepwise);
        assert_eq!(r(4.5), Route::Stepwise);
    }

    #[test]
    fn scores_snap_to_the_half_point_grid() {
        assert_eq!(ComplexityScore::snapped(2.49).unwrap().value(), 2.5);
        assert_eq!(ComplexityScore::snapped(3.96).unwrap().value(), 4.0);
        assert!(ComplexityScore::snapped(2.3).is_none());
        assert!(ComplexityScore::snapped(6.0).is_none());
        assert!(ComplexityScore::snapped(f64::NAN).is_none());
        assert!(ComplexityScore::new(2.25).is_none());
    }

    #[test]
    fn score_is_parsed_from_tag() {
        let (gw, _) = scripted(&["<think>t</think><score>3.5</score>"]);
        let s = score_complexity(INPUTS, "plan", &gw).unwrap();
        assert_eq!(s.score.value(), 3.5);
        assert!(!s.defaulted);
    }

    #[test]
    fn bad_score_reprompts_then_defaults() {
        let (gw, seen) = scripted(&["<score>6</score>", "<score>7</score>"]);
        let s = score_complexity(INPUTS, "plan", &gw).unwrap();
        assert!(s.defaulted);
        assert_eq!(s.score.value(), DEFAULT_SCORE);
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 2);
        assert_eq!(seen[1].messages.len(), 3);
    }

    #[test]
    fn one_pass_needs_exactly_one_block() {
        let (gw, _) = scripted(&["```python\nprint(1)\n```"]);
        assert_eq!(code_one_pass(INPUTS, "p", &gw).unwrap(), "print(1)");
        let two = "```\na\n```\n```\nb\n```";
        let (gw, _) = scripted(&[two, two]);
        assert!(matches!(
            code_one_pass(INPUTS, "p", &gw),
            Err(CoderError::ParseFailure { .. })
        ));
    }

    #[test]
    fn decomposition_parses_and_caps() {
        let reply = "```json\n{\n\"decomposed steps\": [\n{\"step\": \"load\", \"details\": \"read csv\",},\n{\"step\": \"fit\", \"details\": \"train\"},\n{\"step\": \"eval\", \"details\": \"score\"},\n{\"step\": \"save\", \"details\": \"write\"}\n],\n}\n```";
        let (gw, _) = scripted(&[reply]);
        assert_eq!(decompose(INPUTS, "p", &gw, 12).unwrap().steps.len(), 4);

        let steps: Vec<Step> = (1..=20)
            .map(|i| Step {
                step: format!("s{i}"),
                details: format!("d{i}"),
            })
            .collect();
        let capped = merge_steps(steps, 12);
        assert_eq!(capped.len(), 12);
        assert_eq!(capped[10].step, "s11");
        assert!(capped[11].details.contains("d12") && capped[11].details.contains("d20"));
    }

    #[test]
    fn empty_decomposition_is_a_parse_failure() {
        let empty = "```json\n{\"decomposed steps\": []}\n```";
        let (gw, _) = scripted(&[empty, empty]);
        assert!(matches!(
            decompose(INPUTS, "p", &gw, 12),
            Err(CoderError::ParseFailure { .. })
        ));
    }

    fn three_steps() -> StepPlan {
        StepPlan {
            steps: ["load", "fit", "predict"]
                .iter()
                .map(|s| Step {
                    step: s.to_string(),
                    details: format!("{s} details"),
                })
                .collect(),
        }
    }

    #[test]
    fn stepwise_happy_path_concatenates_fragments() {
        let dir = tempfile::tempdir().unwrap();
        let ws = workspace(dir.path());
        let exec = FakeExecutor::new(vec![]);
        let replies = [code("a = 1"), code("b = a"), code("print(b)")];
        let (gw, _) = scripted(&replies.iter().map(String::as_str).collect::<Vec<_>>());
        let mut s = exec.open_session(&ws).unwrap();
        let run = code_stepwise(
            INPUTS,
            &three_steps(),
            s.as_mut(),
            &gw,
            &CoderConfig::default(),
            Duration::from_secs(5),
        )
        .unwrap();
        assert_eq!(run.generations, 3);
        assert_eq!(
            run.outcome,
            StepwiseOutcome::Completed {
                script: "a = 1\n\nb = a\n\nprint(b)".into()
            }
        );
        assert!(run.logs.iter().all(|l| l.attempts == 1));
    }

    #[test]
    fn failed_fragment_is_retried_with_feedback() {
        let dir = tempfile::tempdir().unwrap();
        let ws = workspace(dir.path());
        let exec = FakeExecutor::new(vec![FakeRule::new("BROKEN")
            .output("ValueError: bad")
            .failing(1)]);
        let replies = [code("a = 1"), code("BROKEN"), code("b = 2"), code("c = 3")];
        let (gw, seen) = scripted(&replies.iter().map(String::as_str).collect::<Vec<_>>());
        let mut s = exec.open_session(&ws).unwrap();
        let run = code_stepwise(
            INPUTS,
            &three_steps(),
            s.as_mut(),
            &gw,
            &CoderConfig::default(),
            Duration::from_secs(5),
        )
        .unwrap();
        assert_eq!(run.generations, 4);
        assert_eq!(run.logs[1].attempts, 2);
        let StepwiseOutcome::Completed { script } = run.outcome else {
            panic!()
        };
        assert!(!script.contains("BROKEN"));
        let retry_prompt = &seen.lock().unwrap()[2].messages[0].text;
        assert!(retry_prompt.contains("# Failed Last Try"));
        assert!(retry_prompt.contains("ValueError: bad"));
    }

    #[test]
    fn syntax_failures_exhaust_retries_and_are_never_executed() {
        let dir = tempfile::tempdir().unwrap();
        let ws = workspace(dir.path());
        let exec = FakeExecutor::new(vec![FakeRule::new("x = (").syntax_error("never closed")]);
        let replies = [code("a = 1"), code("x = ("), code("x = ("), code("x = (")];
        let (gw, _) = scripted(&replies.iter().map(String::as_str).collect::<Vec<_>>());
        let mut s = exec.open_session(&ws).unwrap();
        let run = code_stepwise(
            INPUTS,
            &three_steps(),
            s.as_mut(),
            &gw,
            &CoderConfig::default(),
            Duration::from_secs(5),
        )
        .unwrap();
        assert_eq!(run.generations, 4);
        assert_eq!(run.logs[1].attempts, 3);
        let StepwiseOutcome::Abandoned {
            substep, ref error, ..
        } = run.outcome
        else {
            panic!("{:?}", run.outcome)
        };
        assert_eq!(substep, 2);
        assert!(error.contains("never closed"));
        let execs: Vec<_> = exec
            .calls()
            .into_iter()
            .filter(|c| matches!(c, FakeCall::Exec(code) if code.contains("x = (")))
            .collect();
        assert!(execs.is_empty());
    }

    #[test]
    fn syntax_check_sees_the_accepted_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let ws = workspace(dir.path());
        let exec = FakeExecutor::new(vec![]);
        let replies = [code("a = 1"), code("b = 2"), code("c = 3")];
        let (gw, _) = scripted(&replies.iter().map(String::as_str).collect::<Vec<_>>());
        let mut s = exec.open_session(&ws).unwrap();
        code_stepwise(
            INPUTS,
            &three_steps(),
            s.as_mut(),
            &gw,
            &CoderConfig::default(),
            Duration::from_secs(5),
        )
        .unwrap();
        let checks: Vec<String> = exec
            .calls()
            .into_iter()
            .filter_map(|c| match c {
                FakeCall::Check(code) => Some(code),
                _ => None,
            })
            .collect();
        assert_eq!(
            checks,
            ["a = 1", "a = 1\n\nb = 2", "a = 1\n\nb = 2\n\nc = 3"]
        );
    }

    #[test]
    fn implement_one_pass_runs_the_script() {
        let dir = tempfile::tempdir().unwrap();
        let ws = workspace(dir.path());
        let exec = FakeExecutor::new(vec![FakeRule::new("fit").output("Validation metric: 0.9")]);
        let (gw, _) = scripted(&["<score>2</score>", "```python\nfit()\n```"]);
        let imp = implement(
            INPUTS,
            "plan",
            &gw,
            &exec,
            &ws,
            &CoderConfig::default(),
            Duration::from_secs(5),
        )
        .unwrap();
        assert_eq!(imp.log.strategy, Route::OnePass);
        assert_eq!(imp.code, "fit()");
        assert!(imp.exec.output.contains("0.9"));
        assert_eq!(exec.calls(), vec![FakeCall::Run("fit()".into())]);
    }

    #[test]
    fn implement_falls_back_when_decomposition_fails() {
        let dir = tempfile::tempdir().unwrap();
        let ws = workspace(dir.path());
        let exec = FakeExecutor::new(vec![]);
        let (gw, _) = scripted(&["<score>4</score>", "nope", "still nope", "```\nrun()\n```"]);
        let imp = implement(
            INPUTS,
            "plan",
            &gw,
            &exec,
            &ws,
            &CoderConfig::default(),
            Duration::from_secs(5),
        )
        .unwrap();
        assert_eq!(imp.log.strategy, Route::Stepwise);
        assert!(imp.log.fallback.is_some());
        assert_eq!(imp.code, "run()");
    }

    #[test]
    fn config_validation() {
        assert!(CoderConfig::default().validate().is_ok());
        let bad = CoderConfig {
            complexity_threshold: 0.5,
            ..CoderConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = CoderConfig {
            retry_limit: 0,
            ..CoderConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
