use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coder::CodingLog;
use crate::tree::{
    ActionKind, MetricValue, NodeId, NodeStatus, SolutionNode, SolutionTree, TreeError,
};

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("journal line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

fn io_err(path: &Path, source: std::io::Error) -> JournalError {
    JournalError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One line of `journal.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub id: NodeId,
    pub parent_id: Option<NodeId>,
    pub action_kind: ActionKind,
    pub status: NodeStatus,
    pub metric_value: Option<f64>,
    pub lower_is_better: Option<bool>,
    pub debug_depth: u32,
    pub step_index: u64,
    pub plan: String,
    pub code: String,
    pub output: String,
    pub summary: String,
    #[serde(default)]
    pub with_tricks: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coding: Option<CodingLog>,
}

impl JournalRecord {
    pub fn new(node: &SolutionNode, coding: Option<CodingLog>) -> Self {
        Self {
            id: node.id.clone(),
            parent_id: node.parent_id.clone(),
            action_kind: node.action_kind,
            status: node.status,
            metric_value: node.metric.map(|m| m.value()),
            lower_is_better: node.metric.map(|m| m.lower_is_better()),
            debug_depth: node.debug_depth,
            step_index: node.step_index,
            plan: node.plan.clone(),
            code: node.code.clone(),
            output: node.output.clone(),
            summary: node.summary.clone(),
            with_tricks: node.with_tricks,
            coding,
        }
    }

    pub fn to_node(&self) -> Result<SolutionNode, TreeError> {
        let metric = match (self.metric_value, self.lower_is_better) {
            (Some(v), Some(lower)) => Some(MetricValue::new(v, lower)?),
            (Some(v), None) => Some(MetricValue::new(v, false)?),
            (None, _) => None,
        };
        Ok(SolutionNode {
            id: self.id.clone(),
            parent_id: self.parent_id.clone(),
            action_kind: self.action_kind,
            plan: self.plan.clone(),
            code: self.code.clone(),
            output: self.output.clone(),
            metric,
            status: self.status,
            summary: self.summary.clone(),
            debug_depth: self.debug_depth,
            step_index: self.step_index,
            with_tricks: self.with_tricks,
        })
    }
}

/// Append-only journal writer; every record is flushed as it is written.
pub struct JournalWriter {
    path: PathBuf,
    file: File,
}

impl JournalWriter {
    /// Creates (or truncates) the journal at `path`.
    pub fn create(path: &Path) -> Result<Self, JournalError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<(), JournalError> {
        let mut line = serde_json::to_string(record).map_err(|e| JournalError::Malformed {
            line: 0,
            reason: e.to_string(),
        })?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| io_err(&self.path, e))
    }
}

pub fn read_journal(path: &Path) -> Result<Vec<JournalRecord>, JournalError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| JournalError::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Rebuilds the tree by inserting every record in journal order.
pub fn replay_tree(records: &[JournalRecord]) -> Result<SolutionTree, JournalError> {
    let mut tree = SolutionTree::new();
    for r in records {
        tree.add_node(r.to_node()?)?;
    }
    Ok(tree)
}
