use std::fmt;

use serde::{Deserialize, Serialize};

use crate::prompts::NO_MEMORY;
use crate::text::first_sentence;
use crate::tree::{ActionKind, NodeId, NodeStatus, SolutionTree};

pub const DEFAULT_MEMORY_BOUND: usize = 10;
const PLAN_DIGEST_CHARS: usize = 240;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub node_id: NodeId,
    pub step_index: u64,
    pub action: ActionKind,
    pub status: NodeStatus,
    pub metric: Option<f64>,
    pub plan_digest: String,
}

/// Compact view of recent nodes for the planner. Never carries code.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryDigest {
    pub entries: Vec<MemoryEntry>,
}

/// The `bound` most recent nodes, oldest first.
pub fn build_memory(tree: &SolutionTree, bound: usize) -> MemoryDigest {
    let nodes = tree.nodes();
    let start = nodes.len().saturating_sub(bound);
    let mut recent: Vec<_> = nodes[start..].iter().collect();
    recent.sort_by_key(|n| n.step_index);
    MemoryDigest {
        entries: recent
            .into_iter()
            .map(|n| MemoryEntry {
                node_id: n.id.clone(),
                step_index: n.step_index,
                action: n.action_kind,
                status: n.status,
                metric: n.metric.map(|m| m.value()),
                plan_digest: first_sentence(&n.plan, PLAN_DIGEST_CHARS),
            })
            .collect(),
    }
}

impl MemoryDigest {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn render(&self) -> String {
        if self.entries.is_empty() {
            NO_MEMORY.to_string()
        } else {
            self.to_string()
        }
    }
}

impl fmt::Display for MemoryDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "- {} ({}, {}", e.node_id, e.action, e.status)?;
            if let Some(m) = e.metric {
                write!(f, ", metric {m}")?;
            }
            write!(f, "): {}", e.plan_digest)?;
        }
        Ok(())
    }
}
