//! One search step: plan, implement, execute and verify a candidate.

mod analysis;
mod memory;
mod plan;
mod verify;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::coder::{implement, CoderConfig, CoderError, CodingInputs, CodingLog};
use crate::knowledge::{Embedder, KnowledgeEntry, KnowledgeIndex, KnowledgeQuery, LabelPath};
use crate::llm::{Gateway, LlmError};
use crate::policy::PolicyDecision;
use crate::prompts::{DEFAULT_PACKAGES, NO_KNOWLEDGE};
use crate::sandbox::{
    collect_artifacts, Executor, SandboxError, Workspace, DEFAULT_EXEC_TIMEOUT_SECS,
};
use crate::tree::{ActionKind, MetricValue, NodeId, NodeStatus, SolutionNode, SolutionTree};

pub use analysis::{analyze_data, refine_analysis};
pub use memory::{build_memory, MemoryDigest, MemoryEntry, DEFAULT_MEMORY_BOUND};
pub use plan::{
    generate_plan_debug, generate_plan_draft, generate_plan_improve, GeneratedPlan, PlanError,
};
pub use verify::{apply_overrides, verify_output, Verdict};

/// Errors that end the run. Everything else becomes a buggy node.
#[derive(Debug, Error)]
pub enum ActionError {
    #[error("workspace input directory missing: {0}")]
    WorkspaceMissing(String),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("token budget exhausted: {0}")]
    BudgetExceeded(LlmError),
    #[error("decision refers to unknown node {0}")]
    UnknownParent(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_hint: Option<String>,
}

impl TaskSpec {
    /// Description as shown to the models.
    pub fn prompt_text(&self) -> String {
        match &self.metric_hint {
            Some(hint) => format!(
                "{}\n\nEvaluation metric: {hint}",
                self.description.trim_end()
            ),
            None => self.description.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSettings {
    pub memory_bound: usize,
    pub num_papers: usize,
    pub num_tricks: usize,
    pub exec_timeout: Duration,
    pub packages: String,
}

impl Default for ActionSettings {
    fn default() -> Self {
        Self {
            memory_bound: DEFAULT_MEMORY_BOUND,
            num_papers: 3,
            num_tricks: 3,
            exec_timeout: Duration::from_secs(DEFAULT_EXEC_TIMEOUT_SECS),
            packages: DEFAULT_PACKAGES.to_string(),
        }
    }
}

/// Knowledge available for the whole run.
pub struct RunKnowledge {
    pub index: KnowledgeIndex,
    pub embedder: Box<dyn Embedder>,
    pub task_labels: Vec<LabelPath>,
}

impl RunKnowledge {
    fn papers(&self, task: &TaskSpec, k: usize) -> Vec<KnowledgeEntry> {
        if k == 0 {
            return Vec::new();
        }
        match self
            .index
            .retrieve_papers(self.embedder.as_ref(), &task.description, k)
        {
            Ok(hits) => hits.into_iter().map(|h| h.entry).collect(),
            Err(e) => {
                warn!(%e, "paper retrieval failed; continuing without papers");
                Vec::new()
            }
        }
    }

    fn tricks(&self, task: &TaskSpec, k: usize) -> Vec<KnowledgeEntry> {
        if k == 0 {
            return Vec::new();
        }
        let query = KnowledgeQuery {
            task_id: task.task_id.clone(),
            task_labels: self.task_labels.clone(),
            free_text: task.description.clone(),
            k,
        };
        match self.index.retrieve(self.embedder.as_ref(), &query) {
            Ok(hits) => hits.into_iter().map(|h| h.entry).collect(),
            Err(e) => {
                warn!(%e, "trick retrieval failed; continuing without tricks");
                Vec::new()
            }
        }
    }
}

fn render_knowledge(entries: &[KnowledgeEntry]) -> String {
    entries
        .iter()
        .map(KnowledgeEntry::render)
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Everything an action needs besides the tree and the decision.
pub struct ActionEnv<'a> {
    pub task: &'a TaskSpec,
    pub workspace: &'a Workspace,
    pub data_analysis: &'a str,
    pub llm: &'a Gateway,
    pub executor: &'a dyn Executor,
    pub knowledge: Option<&'a RunKnowledge>,
    pub coder: &'a CoderConfig,
    pub settings: &'a ActionSettings,
}

/// A new node plus the side records the journal keeps for it.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionOutcome {
    pub node: SolutionNode,
    pub coding: Option<CodingLog>,
    pub reasoning: Option<String>,
    pub verdict: Option<Verdict>,
    /// Ids of the knowledge entries shown to the planner.
    pub knowledge_ids: Vec<String>,
}

fn fatal_llm(e: LlmError) -> Result<String, ActionError> {
    match e {
        LlmError::BudgetExceeded { .. } => Err(ActionError::BudgetExceeded(e)),
        other => Ok(other.to_string()),
    }
}

/// Executes `decision` and returns the resulting node, not yet added to
/// `tree`. Model and parsing failures yield a buggy node; only budget
/// exhaustion and executor or workspace failures are errors.
pub fn run_action(
    tree: &SolutionTree,
    decision: &PolicyDecision,
    env: &ActionEnv<'_>,
    step_index: u64,
) -> Result<ActionOutcome, ActionError> {
    let parent = match &decision.parent {
        Some(id) => Some(
            tree.get(id)
                .ok_or_else(|| ActionError::UnknownParent(id.clone()))?,
        ),
        None => None,
    };
    let mut node = SolutionNode {
        id: NodeId::for_step(step_index),
        parent_id: parent.map(|p| p.id.clone()),
        action_kind: decision.action,
        plan: String::new(),
        code: String::new(),
        output: String::new(),
        metric: None,
        status: NodeStatus::Buggy,
        summary: String::new(),
        debug_depth: match (decision.action, parent) {
            (ActionKind::Debug, Some(p)) => p.debug_depth + 1,
            _ => 0,
        },
        step_index,
        with_tricks: false,
    };
    let mut outcome = ActionOutcome {
        node: node.clone(),
        coding: None,
        reasoning: None,
        verdict: None,
        knowledge_ids: Vec::new(),
    };

    env.workspace.reset_submission()?;
    let task_text = env.task.prompt_text();
    let inputs = CodingInputs {
        task_description: &task_text,
        data_analysis: env.data_analysis,
        packages: &env.settings.packages,
    };

    let planned = match (decision.action, parent) {
        (ActionKind::Draft, _) => {
            let memory = build_memory(tree, env.settings.memory_bound).render();
            let papers = env
                .knowledge
                .map(|k| k.papers(env.task, env.settings.num_papers))
                .unwrap_or_default();
            outcome.knowledge_ids = papers.iter().map(|e| e.id().to_string()).collect();
            let knowledge = if papers.is_empty() {
                NO_KNOWLEDGE.to_string()
            } else {
                render_knowledge(&papers)
            };
            generate_plan_draft(inputs, &memory, &knowledge, env.llm)
        }
        (ActionKind::Improve, Some(p)) => {
            let memory = build_memory(tree, env.settings.memory_bound).render();
            let tricks = match (decision.with_tricks, env.knowledge) {
                (true, Some(k)) => k.tricks(env.task, env.settings.num_tricks),
                _ => Vec::new(),
            };
            if decision.with_tricks && tricks.is_empty() {
                info!("no tricks available; improving without them");
            }
            node.with_tricks = !tricks.is_empty();
            outcome.knowledge_ids = tricks.iter().map(|e| e.id().to_string()).collect();
            let rendered = (!tricks.is_empty()).then(|| render_knowledge(&tricks));
            generate_plan_improve(inputs, &memory, p, rendered.as_deref(), env.llm)
        }
        (ActionKind::Debug, Some(p)) => generate_plan_debug(inputs, p, env.llm),
        (kind, None) => {
            node.summary = format!("{kind} decision without a parent node");
            outcome.node = node;
            return Ok(outcome);
        }
    };

    let planned = match planned {
        Ok(p) => p,
        Err(PlanError::Llm(e)) => {
            node.summary = format!("plan generation failed: {}", fatal_llm(e)?);
            outcome.node = node;
            return Ok(outcome);
        }
        Err(e) => {
            node.summary = format!("plan generation failed: {e}");
            outcome.node = node;
            return Ok(outcome);
        }
    };
    node.plan = planned.plan;
    outcome.reasoning = planned.reasoning;

    let implementation = match implement(
        inputs,
        &node.plan,
        env.llm,
        env.executor,
        env.workspace,
        env.coder,
        env.settings.exec_timeout,
    ) {
        Ok(i) => i,
        Err(CoderError::Llm(e)) => {
            node.summary = format!("coding failed: {}", fatal_llm(e)?);
            outcome.node = node;
            return Ok(outcome);
        }
        Err(CoderError::Sandbox(SandboxError::SessionLost(why))) => {
            node.summary = format!("coding failed: session lost: {why}");
            outcome.node = node;
            return Ok(outcome);
        }
        Err(CoderError::Sandbox(e)) => return Err(e.into()),
        Err(e @ CoderError::ParseFailure { .. }) => {
            node.summary = format!("coding failed: {e}");
            outcome.node = node;
            return Ok(outcome);
        }
    };
    node.code = implementation.code;
    node.output = implementation.exec.output.clone();
    outcome.coding = Some(implementation.log);

    if let Some(ab) = implementation.abandoned {
        node.summary = format!("plan abandoned at substep {}: {}", ab.substep, ab.error);
        outcome.node = node;
        return Ok(outcome);
    }

    let artifacts = collect_artifacts(env.workspace);
    let verdict = match verify_output(
        &task_text,
        &node.code,
        &implementation.exec,
        &artifacts,
        env.llm,
    ) {
        Ok(v) => v,
        Err(e) => {
            node.summary = format!("verification failed: {}", fatal_llm(e)?);
            outcome.node = node;
            return Ok(outcome);
        }
    };
    node.summary = verdict.full_summary();
    if !verdict.is_bug {
        // Overrides guarantee a finite metric on non-bug verdicts.
        if let Some(m) = verdict
            .metric
            .and_then(|v| MetricValue::new(v, verdict.lower_is_better).ok())
        {
            node.status = NodeStatus::Valid;
            node.metric = Some(m);
        }
    }
    outcome.verdict = Some(verdict);
    outcome.node = tree.normalize_direction(node);
    Ok(outcome)
}
