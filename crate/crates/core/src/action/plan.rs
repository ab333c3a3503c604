use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coder::CodingInputs;
use crate::llm::{ChatRequest, Gateway, LlmError, Message, Role};
use crate::prompts::Template;
use crate::text::tag_content;
use crate::tree::SolutionNode;

const EMPTY_PLAN_CORRECTION: &str =
    "Your previous response was empty. Reply with the solution plan in natural language.";
const TAGGED_PLAN_CORRECTION: &str = "Your previous response could not be parsed. Wrap your reasoning in <think></think> and then the full plan in <plan></plan>.";

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("could not parse plan: {0}")]
    ParseFailure(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedPlan {
    pub plan: String,
    /// Contents of the `<think>` section, when the template asks for one.
    pub reasoning: Option<String>,
}

fn render(template: Template, values: &[(&str, &str)]) -> String {
    template
        .render(values)
        .expect("plan templates take a fixed set of values")
}

/// Sends `prompt`, parses with `parse`, and retries once with `correction`.
fn ask(
    role: Role,
    prompt: String,
    llm: &Gateway,
    parse: fn(&str) -> Result<GeneratedPlan, String>,
    correction: &str,
) -> Result<GeneratedPlan, PlanError> {
    let mut request = ChatRequest::prompt(role, prompt);
    let reply = llm.complete(&request)?;
    match parse(reply.content()) {
        Ok(plan) => Ok(plan),
        Err(reason) => {
            tracing::warn!(%reason, %role, "plan response unusable; reprompting once");
            request.messages.push(Message::assistant(reply.content()));
            request.messages.push(Message::user(correction));
            let reply = llm.complete(&request)?;
            parse(reply.content()).map_err(PlanError::ParseFailure)
        }
    }
}

fn parse_free_plan(reply: &str) -> Result<GeneratedPlan, String> {
    let plan = tag_content(reply, "plan").unwrap_or(reply).trim();
    if plan.is_empty() {
        return Err("empty plan".into());
    }
    Ok(GeneratedPlan {
        plan: plan.to_string(),
        reasoning: tag_content(reply, "think").map(str::to_string),
    })
}

fn parse_tagged_plan(reply: &str) -> Result<GeneratedPlan, String> {
    let plan = tag_content(reply, "plan").ok_or("no <plan></plan> section")?;
    if plan.is_empty() {
        return Err("empty <plan></plan> section".into());
    }
    Ok(GeneratedPlan {
        plan: plan.to_string(),
        reasoning: tag_content(reply, "think").map(str::to_string),
    })
}

/// Plan for a fresh solution. `knowledge` is the rendered paper section.
pub fn generate_plan_draft(
    inputs: CodingInputs<'_>,
    memory: &str,
    knowledge: &str,
    llm: &Gateway,
) -> Result<GeneratedPlan, PlanError> {
    let prompt = render(
        Template::Draft,
        &[
            ("task_description", inputs.task_description),
            ("memory", memory),
            ("tricks", knowledge),
            ("data_analysis", inputs.data_analysis),
            ("packages", inputs.packages),
        ],
    );
    ask(
        Role::Planner,
        prompt,
        llm,
        parse_free_plan,
        EMPTY_PLAN_CORRECTION,
    )
}

/// Plan refining `parent`. With `tricks` the knowledge-augmented template is
/// used, otherwise the plain one.
pub fn generate_plan_improve(
    inputs: CodingInputs<'_>,
    memory: &str,
    parent: &SolutionNode,
    tricks: Option<&str>,
    llm: &Gateway,
) -> Result<GeneratedPlan, PlanError> {
    let mut values = vec![
        ("task_description", inputs.task_description),
        ("memory", memory),
        ("prev_plan", parent.plan.as_str()),
        ("prev_code", parent.code.as_str()),
        ("prev_output", parent.output.as_str()),
        ("data_analysis", inputs.data_analysis),
        ("packages", inputs.packages),
    ];
    let template = match tricks {
        Some(t) => {
            values.push(("tricks", t));
            Template::ImproveWithTricks
        }
        None => Template::ImproveWithoutTricks,
    };
    let prompt = render(template, &values);
    ask(
        Role::Improver,
        prompt,
        llm,
        parse_tagged_plan,
        TAGGED_PLAN_CORRECTION,
    )
}

/// Plan fixing the buggy `parent`.
pub fn generate_plan_debug(
    inputs: CodingInputs<'_>,
    parent: &SolutionNode,
    llm: &Gateway,
) -> Result<GeneratedPlan, PlanError> {
    let prompt = render(
        Template::Debug,
        &[
            ("task_description", inputs.task_description),
            ("prev_plan", parent.plan.as_str()),
            ("prev_code", parent.code.as_str()),
            ("prev_output", parent.output.as_str()),
            ("data_analysis", inputs.data_analysis),
            ("packages", inputs.packages),
        ],
    );
    ask(
        Role::Improver,
        prompt,
        llm,
        parse_tagged_plan,
        TAGGED_PLAN_CORRECTION,
    )
}
