#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use automind_core::llm::{ChatRequest, ChatResponse, FnBackend, Gateway, Role, RoleModelConfig};
use automind_core::sandbox::{prepare_workspace, Workspace};
use serde_json::json;

/// Per-role reply queues plus a log of every request.
#[derive(Clone, Default)]
pub struct Script {
    queues: Arc<Mutex<HashMap<Role, VecDeque<ChatResponse>>>>,
    pub seen: Arc<Mutex<Vec<ChatRequest>>>,
}

impl Script {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, role: Role, reply: ChatResponse) -> &Self {
        self.queues
            .lock()
            .unwrap()
            .entry(role)
            .or_default()
            .push_back(reply);
        self
    }

    pub fn text(&self, role: Role, text: &str) -> &Self {
        self.push(role, ChatResponse::text(text))
    }

    pub fn gateway(&self) -> Gateway {
        self.gateway_with(RoleModelConfig::default())
    }

    pub fn gateway_with(&self, models: RoleModelConfig) -> Gateway {
        let queues = self.queues.clone();
        let seen = self.seen.clone();
        Gateway::new(
            models,
            FnBackend(move |req: &ChatRequest| {
                seen.lock().unwrap().push(req.clone());
                let reply = queues
                    .lock()
                    .unwrap()
                    .get_mut(&req.role)
                    .and_then(VecDeque::pop_front)
                    .unwrap_or_else(|| panic!("no scripted reply left for {}", req.role));
                Ok(reply)
            }),
        )
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }

    pub fn roles(&self) -> Vec<Role> {
        self.requests().iter().map(|r| r.role).collect()
    }

    pub fn remaining(&self) -> usize {
        self.queues
            .lock()
            .unwrap()
            .values()
            .map(VecDeque::len)
            .sum()
    }
}

pub fn verdict(metric: Option<f64>, lower_is_better: bool) -> ChatResponse {
    ChatResponse::tool_call(
        "submission_verify",
        json!({
            "is_bug": metric.is_none(),
            "is_overfitting": false,
            "has_csv_submission": true,
            "summary": match metric {
                Some(m) => format!("Validation score {m}."),
                None => "The run failed.".to_string(),
            },
            "metric": metric,
            "lower_is_better": lower_is_better,
        }),
    )
}

pub fn code_reply(body: &str) -> String {
    format!("<think>write it</think>\n```python\n{body}\n```")
}

pub fn score_reply(score: f64) -> String {
    format!("<think>judging</think><score>{score}</score>")
}

/// Workspace with a tiny train/test split.
pub fn workspace(dir: &Path) -> Workspace {
    let data = dir.join("data");
    fs::create_dir_all(&data).unwrap();
    fs::write(data.join("train.csv"), "id,x,y\n1,0.1,0\n2,0.9,1\n").unwrap();
    fs::write(data.join("test.csv"), "id,x\n3,0.4\n").unwrap();
    prepare_workspace(&data, &dir.join("ws")).unwrap()
}

/// Deterministic stand-in for every model role. It recognizes each prompt by
/// its template headings and keys code and outcomes on `TAG` markers that it
/// threads through plans, steps and code:
///
/// - drafts get tags `D0`, `D1`, ..., debug fixes `F0`, ..., improves `I0`, ...
/// - generated code is `solve("<tag>")`, or `load("<tag>")` then
///   `solve("<tag>")` for stepwise plans
/// - the verifier reports the number after `Validation metric:` in the
///   execution output, a bug on `Traceback`, and otherwise a seeded
///   pseudo-random outcome
pub struct Agent {
    seed: u64,
    counters: Mutex<HashMap<&'static str, usize>>,
    stepwise_improves: Vec<usize>,
    on_action: Option<Box<dyn Fn() + Send + Sync>>,
}

impl Agent {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            counters: Mutex::default(),
            stepwise_improves: Vec::new(),
            on_action: None,
        }
    }

    /// Improves with these indices get a plan that scores as complex.
    pub fn stepwise_improves(mut self, which: &[usize]) -> Self {
        self.stepwise_improves = which.to_vec();
        self
    }

    /// Called once per action, at its planning request.
    pub fn on_action(mut self, f: impl Fn() + Send + Sync + 'static) -> Self {
        self.on_action = Some(Box::new(f));
        self
    }

    fn next(&self, key: &'static str) -> usize {
        let mut c = self.counters.lock().unwrap();
        let n = c.entry(key).or_default();
        *n += 1;
        *n - 1
    }

    fn action_started(&self) {
        if let Some(f) = &self.on_action {
            f();
        }
    }

    pub fn respond(&self, req: &ChatRequest) -> ChatResponse {
        let prompt = req.messages[0].text.as_str();
        match req.role {
            Role::Retriever if prompt.contains("# Top-level categories") => {
                ChatResponse::text(r#"["Tabular Data"]"#)
            }
            Role::Retriever => ChatResponse::text(
                r#"["Tabular Data/Tabular Classification", "Tabular Data/Feature Engineering"]"#,
            ),
            Role::Analyzer => ChatResponse::text(
                "train.csv holds the labelled rows with target column y; test.csv holds the rows to predict.",
            ),
            Role::Planner => {
                self.action_started();
                let n = self.next("draft");
                ChatResponse::text(format!(
                    "Draft solution {n}: fit a gradient boosted classifier on x with a stratified hold-out split. TAG D{n}"
                ))
            }
            Role::Improver if !prompt.contains("# Memory") => {
                self.action_started();
                let n = self.next("debug");
                ChatResponse::text(format!(
                    "<think>The previous run crashed before writing a submission.</think>\n<plan>Fix the failing step and write the submission file. TAG F{n}</plan>"
                ))
            }
            Role::Improver => {
                self.action_started();
                let n = self.next("improve");
                let style = if self.stepwise_improves.contains(&n) { " STEPWISE" } else { "" };
                ChatResponse::text(format!(
                    "<think>A better tuned model should help.</think>\n<plan>Improved solution {n}: tune the learning rate and tree depth.{style} TAG I{n}</plan>"
                ))
            }
            Role::Coder if prompt.contains("<score></score>") => {
                let proposed = section(prompt, "# Proposed Solution");
                let score = if proposed.contains("STEPWISE") { 3.5 } else { 2.0 };
                ChatResponse::text(score_reply(score))
            }
            Role::Coder if prompt.contains("# Current Step") => {
                let step = section(prompt, "# Current Step");
                let tag = tag_in(step);
                let call = if step.contains("FRAG load") { "load" } else { "solve" };
                ChatResponse::text(code_reply(&format!("{call}(\"{tag}\")")))
            }
            Role::Coder if prompt.contains("\"decomposed steps\"") => {
                let tag = tag_in(section(prompt, "# Proposed Solution"));
                ChatResponse::text(format!(
                    "```json\n{{\"decomposed steps\": [{{\"step\": \"Load data\", \"details\": \"FRAG load TAG {tag}\"}}, {{\"step\": \"Train and predict\", \"details\": \"FRAG solve TAG {tag}\"}}]}}\n```"
                ))
            }
            Role::Coder => {
                let tag = tag_in(section(prompt, "# Proposed Solution"));
                ChatResponse::text(code_reply(&format!("solve(\"{tag}\")")))
            }
            Role::Verifier => self.verdict(prompt),
        }
    }

    fn verdict(&self, prompt: &str) -> ChatResponse {
        if let Some(rest) = prompt.split("Validation metric: ").nth(1) {
            let num: String = rest
                .chars()
                .take_while(|c| c.is_ascii_digit() || *c == '.')
                .collect();
            return verdict(Some(num.parse().unwrap()), false);
        }
        if prompt.contains("Traceback") {
            return verdict(None, false);
        }
        let tag = prompt
            .split("solve(\"")
            .nth(1)
            .and_then(|r| r.split('"').next())
            .unwrap_or("");
        let h = mix(self.seed, tag);
        if h % 10 < 3 {
            verdict(None, false)
        } else {
            verdict(Some((h % 1000) as f64 / 1000.0), false)
        }
    }
}

fn mix(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the seed and tag; stable across platforms and releases.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in seed.to_le_bytes().iter().chain(tag.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Text between `heading` and the next top-level heading.
fn section<'a>(prompt: &'a str, heading: &str) -> &'a str {
    let Some(start) = prompt.find(heading) else {
        return "";
    };
    let rest = &prompt[start + heading.len()..];
    match rest.find("\n# ") {
        Some(end) => &rest[..end],
        None => rest,
    }
}

fn tag_in(text: &str) -> String {
    text.split("TAG ")
        .nth(1)
        .map(|r| {
            r.chars()
                .take_while(|c| c.is_ascii_alphanumeric())
                .collect()
        })
        .unwrap_or_else(|| "none".into())
}

pub fn agent_gateway(agent: Agent) -> Gateway {
    agent_gateway_with(RoleModelConfig::default(), agent)
}

pub fn agent_gateway_with(models: RoleModelConfig, agent: Agent) -> Gateway {
    Gateway::new(
        models,
        FnBackend(move |req: &ChatRequest| Ok(agent.respond(req))),
    )
}

/// Rules for the tags the agent emits. Every `solve(...)` call writes a
/// submission; tags listed in `outcomes` print a metric or crash.
pub fn agent_executor(outcomes: &[(&str, Option<f64>)]) -> automind_core::sandbox::FakeExecutor {
    use automind_core::sandbox::{FakeExecutor, FakeRule};
    let mut rules = Vec::new();
    for (tag, metric) in outcomes {
        let needle = format!("solve(\"{tag}\")");
        rules.push(match metric {
            Some(m) => FakeRule::new(needle)
                .output(format!("fold 1 done\nValidation metric: {m}\n"))
                .writes("submission/submission.csv", format!("id,y\n3,{m}\n")),
            None => FakeRule::new(needle)
                .output("Traceback (most recent call last):\nKeyError: 'target'\n")
                .failing(1),
        });
    }
    rules.push(
        FakeRule::new("solve(")
            .output("done\n")
            .writes("submission/submission.csv", "id,y\n3,0\n"),
    );
    FakeExecutor::new(rules)
}
