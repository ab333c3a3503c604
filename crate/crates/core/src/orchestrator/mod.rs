//! The run loop: configuration, budgets, journaling and run artifacts.
//!
//! A run writes everything under its output directory:
//!
//! ```text
//! journal.jsonl      one line per node, append-only
//! snapshots.jsonl    best metric at every full hour of run time
//! result.json        the run summary
//! submission.csv     the best node's submission
//! data_analysis.md   the data profile shown to the models
//! nodes/<id>/        solution.py, output.txt and any submission per node
//! workspace/         the live input/submission/working layout
//! ```

mod clock;
mod config;
mod journal;
mod render;
mod task;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::action::{
    analyze_data, refine_analysis, run_action, ActionEnv, ActionError, ActionSettings, RunKnowledge,
};
use crate::knowledge::{label_task, Embedder, KnowledgeError, KnowledgeIndex, Taxonomy};
use crate::llm::{Gateway, LlmError, TokenTotals};
use crate::policy::{select, RandomSource};
use crate::prompts::DEFAULT_PACKAGES;
use crate::sandbox::{prepare_workspace, Executor, SandboxError, Workspace};
use crate::tree::{MetricValue, NodeId, SolutionNode, SolutionTree, TreeError};

pub use clock::{Clock, SimulatedClock, SystemClock};
pub use config::{
    load_config, parse_config, ConfigError, RunConfig, RunPaths, KNOWN_KEYS, TARGET_MODEL_ENV,
};
pub use journal::{read_journal, replay_tree, JournalError, JournalRecord, JournalWriter};
pub use render::{render_dot, render_tree};
pub use task::{load_task, TaskDir};

const SECS_PER_HOUR: u64 = 3600;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid task: {0}")]
    Task(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> RunError {
    RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Steps,
    TimeLimit,
    TokenBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub best: Option<NodeId>,
    pub best_metric: Option<MetricValue>,
    pub submission_path: Option<PathBuf>,
    pub nodes_created: u64,
    pub tokens: TokenTotals,
    pub elapsed_secs: f64,
    pub stop_reason: StopReason,
    pub task_labels: Vec<String>,
}

/// Best metric at one full hour of run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub elapsed_hours: u64,
    pub best_node: Option<NodeId>,
    pub best_metric_value: Option<f64>,
}

/// Emits one [`Snapshot`] per completed hour of run time.
#[derive(Debug, Clone)]
pub struct SnapshotTracker {
    next_hour: u64,
}

impl Default for SnapshotTracker {
    fn default() -> Self {
        Self { next_hour: 1 }
    }
}

impl SnapshotTracker {
    /// Snapshots for every hour boundary passed since the last poll, each
    /// recording the tree's current best.
    pub fn poll(&mut self, tree: &SolutionTree, elapsed: Duration) -> Vec<Snapshot> {
        let mut out = Vec::new();
        while elapsed.as_secs() >= self.next_hour * SECS_PER_HOUR {
            let best = tree.best_node().ok().flatten();
            let value = best
                .as_ref()
                .and_then(|id| tree.get(id))
                .and_then(|n| n.metric)
                .map(|m| m.value());
            out.push(Snapshot {
                elapsed_hours: self.next_hour,
                best_node: best,
                best_metric_value: value,
            });
            self.next_hour += 1;
        }
        out
    }
}

/// Backends a run talks to. Knowledge is `None` when disabled.
pub struct RunServices {
    pub llm: Gateway,
    pub executor: Box<dyn Executor>,
    pub knowledge: Option<(KnowledgeIndex, Box<dyn Embedder>)>,
    pub clock: Box<dyn Clock>,
}

fn is_budget(e: &LlmError) -> bool {
    matches!(e, LlmError::BudgetExceeded { .. })
}

/// Copies what a node left behind into `nodes/<id>/`.
fn keep_artifacts(out_dir: &Path, ws: &Workspace, node: &SolutionNode) -> Result<(), RunError> {
    let dir = out_dir.join("nodes").join(node.id.as_str());
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| io_err(&p, e))
    };
    write("solution.py", &node.code)?;
    write("output.txt", &node.output)?;
    for src in [ws.submission_file(), ws.eval_metric_file()] {
        if src.is_file() {
            let dst = dir.join(src.file_name().expect("fixed file name"));
            fs::copy(&src, &dst).map_err(|e| io_err(&src, e))?;
        }
    }
    Ok(())
}

/// Runs the search until the step cap, the time limit or the token budget
/// stops it. Per-action failures become buggy nodes; only infrastructure
/// failures return an error.
pub fn run(
    task: &TaskDir,
    config: &RunConfig,
    out_dir: &Path,
    services: RunServices,
) -> Result<RunResult, RunError> {
    config.validate()?;
    let RunServices {
        llm,
        executor,
        knowledge,
        clock,
    } = services;
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let ws = prepare_workspace(&task.data_dir, &out_dir.join("workspace"))?;
    let spec = &task.spec;
    let time_limit = Duration::from_secs(config.time_limit);
    let mut budget_hit = false;

    let mut analysis = analyze_data(&ws)?;
    if config.refine_analysis {
        match refine_analysis(&analysis, &spec.prompt_text(), &llm) {
            Ok(refined) => analysis = refined,
            Err(e) if is_budget(&e) => budget_hit = true,
            Err(e) => warn!(%e, "analysis refinement failed; using the static profile"),
        }
    }
    let analysis_path = out_dir.join("data_analysis.md");
    fs::write(&analysis_path, &analysis).map_err(|e| io_err(&analysis_path, e))?;

    let run_knowledge = match knowledge {
        Some((index, embedder)) if !budget_hit => {
            let labels = match label_task(
                &spec.description,
                &Taxonomy::builtin(),
                &llm,
                config.label_rounds,
            ) {
                Ok(labels) => labels,
                Err(KnowledgeError::Llm(e)) if is_budget(&e) => {
                    budget_hit = true;
                    Vec::new()
                }
                Err(e) => {
                    warn!(%e, "task labeling failed; ranking tricks by similarity only");
                    Vec::new()
                }
            };
            info!(labels = ?labels.iter().map(ToString::to_string).collect::<Vec<_>>(), "task labeled");
            Some(RunKnowledge {
                index,
                embedder,
                task_labels: labels,
            })
        }
        _ => None,
    };

    let settings = ActionSettings {
        memory_bound: config.memory_bound,
        num_papers: config.num_papers,
        num_tricks: config.num_tricks,
        exec_timeout: config.exec_timeout(),
        packages: DEFAULT_PACKAGES.to_string(),
    };
    let env = ActionEnv {
        task: spec,
        workspace: &ws,
        data_analysis: &analysis,
        llm: &llm,
        executor: executor.as_ref(),
        knowledge: run_knowledge.as_ref(),
        coder: &config.coder,
        settings: &settings,
    };

    let mut journal = JournalWriter::create(&out_dir.join("journal.jsonl"))?;
    let mut snapshot_log = JournalWriter::create(&out_dir.join("snapshots.jsonl"))?;
    let mut snapshots = SnapshotTracker::default();
    let mut rng = RandomSource::seeded(config.seed);
    let mut tree = SolutionTree::new();

    let stop_reason = loop {
        if budget_hit {
            break StopReason::TokenBudget;
        }
        if tree.len() as u64 >= config.steps {
            break StopReason::Steps;
        }
        if clock.elapsed() >= time_limit {
            break StopReason::TimeLimit;
        }
        let step = tree.len() as u64;
        let decision = select(&tree, &config.policy, &mut rng);
        info!(step, action = %decision.action, parent = ?decision.parent.as_ref().map(NodeId::as_str), "starting action");
        let outcome = match run_action(&tree, &decision, &env, step) {
            Ok(o) => o,
            Err(ActionError::BudgetExceeded(e)) => {
                warn!(%e, "token budget exhausted; ending the run");
                budget_hit = true;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        keep_artifacts(out_dir, &ws, &outcome.node)?;
        info!(node = %outcome.node.id, status = %outcome.node.status, summary = %outcome.node.summary, "action finished");
        tree.add_node(outcome.node.clone())?;
        journal.append(&JournalRecord::new(&outcome.node, outcome.coding))?;
        for s in snapshots.poll(&tree, clock.elapsed()) {
            snapshot_log.append(&s)?;
        }
    };
    for s in snapshots.poll(&tree, clock.elapsed()) {
        snapshot_log.append(&s)?;
    }

    let best = tree.best_node()?;
    let best_metric = best
        .as_ref()
        .and_then(|id| tree.get(id))
        .and_then(|n| n.metric);
    let submission_path = match &best {
        Some(id) => {
            let src = out_dir
                .join("nodes")
                .join(id.as_str())
                .join("submission.csv");
            let dst = out_dir.join("submission.csv");
            fs::copy(&src, &dst).map_err(|e| io_err(&src, e))?;
            Some(dst)
        }
        None => None,
    };
    let result = RunResult {
        best,
        best_metric,
        submission_path,
        nodes_created: tree.len() as u64,
        tokens: llm.tokens(),
        elapsed_secs: clock.elapsed().as_secs_f64(),
        stop_reason,
        task_labels: run_knowledge
            .map(|k| k.task_labels.iter().map(ToString::to_string).collect())
            .unwrap_or_default(),
    };
    let result_path = out_dir.join("result.json");
    let text = serde_json::to_string_pretty(&result).expect("run result serializes");
    fs::write(&result_path, text + "\n").map_err(|e| io_err(&result_path, e))?;
    info!(best = ?result.best.as_ref().map(NodeId::as_str), nodes = result.nodes_created, ?stop_reason, "run finished");
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::testing::{node, valid};
    use crate::tree::ActionKind;

    #[test]
    fn three_hours_give_three_snapshots() {
        let mut tree = SolutionTree::new();
        let mut t = SnapshotTracker::default();
        assert!(t.poll(&tree, Duration::from_secs(3599)).is_empty());
        let first = t.poll(&tree, Duration::from_secs(3600));
        assert_eq!(first.len(), 1);
        assert_eq!(first[0].best_metric_value, None);
        tree.add_node(valid(node(0, ActionKind::Draft, None), 0.5, false))
            .unwrap();
        let rest = t.poll(&tree, Duration::from_secs(3 * 3600 + 5));
        assert_eq!(
            rest.iter().map(|s| s.elapsed_hours).collect::<Vec<_>>(),
            [2, 3]
        );
        assert_eq!(rest[1].best_metric_value, Some(0.5));
    }

    #[test]
    fn snapshot_values_never_worsen() {
        let mut tree = SolutionTree::new();
        let mut t = SnapshotTracker::default();
        let mut seen = Vec::new();
        for (i, v) in [0.5, 0.4, 0.7, 0.6, 0.9].into_iter().enumerate() {
            tree.add_node(valid(node(i as u64, ActionKind::Draft, None), v, false))
                .unwrap();
            seen.extend(t.poll(&tree, Duration::from_secs((i as u64 + 1) * 3600)));
        }
        let values: Vec<f64> = seen.iter().map(|s| s.best_metric_value.unwrap()).collect();
        assert!(values.windows(2).all(|w| w[1] >= w[0]), "{values:?}");
    }
}
