//! Solution tree: candidate solutions and the best-node objective.
//!
//! Every candidate solution is a [`SolutionNode`] holding a plan, the code that
//! implements it, the captured execution output and, when the verifier accepted
//! it, a validation metric. Nodes form a forest rooted at drafts; improve and
//! debug actions add children.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum number of leading characters kept by [`truncate_output`].
pub const OUTPUT_HEAD_CHARS: usize = 4000;
/// Maximum number of trailing characters kept by [`truncate_output`].
pub const OUTPUT_TAIL_CHARS: usize = 4000;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("node id `{0}` already present in the tree")]
    DuplicateId(NodeId),
    #[error("parent `{parent}` of node `{child}` does not exist")]
    DanglingParent { child: NodeId, parent: NodeId },
    #[error("node `{0}` violates the node schema: {1}")]
    InvalidNode(NodeId, String),
    #[error("valid nodes disagree on metric direction")]
    MixedMetricDirection,
    #[error("metric value {0} is not finite")]
    NonFiniteMetric(f64),
}

/// Opaque node identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    /// Identifier derived from the creation step, e.g. `node-0007`.
    pub fn for_step(step_index: u64) -> Self {
        Self(format!("node-{step_index:04}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Draft,
    Improve,
    Debug,
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionKind::Draft => "draft",
            ActionKind::Improve => "improve",
            ActionKind::Debug => "debug",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Valid,
    Buggy,
}

impl fmt::Display for NodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeStatus::Valid => "valid",
            NodeStatus::Buggy => "buggy",
        })
    }
}

/// A validation score together with its optimization direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    value: f64,
    lower_is_better: bool,
}

impl MetricValue {
    pub fn new(value: f64, lower_is_better: bool) -> Result<Self, TreeError> {
        if !value.is_finite() {
            return Err(TreeError::NonFiniteMetric(value));
        }
        Ok(Self {
            value,
            lower_is_better,
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn lower_is_better(&self) -> bool {
        self.lower_is_better
    }

    /// `true` when `self` is strictly better than `other`. `None` when the
    /// two metrics use different directions and are therefore incomparable.
    pub fn is_better_than(&self, other: &MetricValue) -> Option<bool> {
        if self.lower_is_better != other.lower_is_better {
            return None;
        }
        Some(if self.lower_is_better {
            self.value < other.value
        } else {
            self.value > other.value
        })
    }
}

/// One candidate solution and its provenance in the tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionNode {
    pub id: NodeId,
    pub parent_id: Option<NodeId>,
    pub action_kind: ActionKind,
    pub plan: String,
    pub code: String,
    pub output: String,
    pub metric: Option<MetricValue>,
    pub status: NodeStatus,
    pub summary: String,
    pub debug_depth: u32,
    pub step_index: u64,
    pub with_tricks: bool,
}

impl SolutionNode {
    pub fn is_valid(&self) -> bool {
        self.status == NodeStatus::Valid
    }

    /// Checks the schema rules that do not depend on the rest of the tree.
    pub fn check_schema(&self) -> Result<(), TreeError> {
        let fail = |why: &str| Err(TreeError::InvalidNode(self.id.clone(), why.to_string()));
        if self.parent_id.is_none() != (self.action_kind == ActionKind::Draft) {
            return fail("parent_id must be absent exactly for draft nodes");
        }
        if self.status == NodeStatus::Valid && self.metric.is_none() {
            return fail("valid node without a metric");
        }
        if self.action_kind != ActionKind::Debug && self.debug_depth != 0 {
            return fail("non-debug node with nonzero debug_depth");
        }
        if self.action_kind != ActionKind::Improve && self.with_tricks {
            return fail("with_tricks set on a non-improve node");
        }
        Ok(())
    }
}

/// Forest of solution nodes in creation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolutionTree {
    nodes: Vec<SolutionNode>,
    index: HashMap<NodeId, usize>,
    children: BTreeMap<NodeId, Vec<NodeId>>,
}

impl SolutionTree {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a node, enforcing id uniqueness, parent existence, debug depth
    /// linkage and strictly increasing step indices.
    pub fn add_node(&mut self, node: SolutionNode) -> Result<(), TreeError> {
        if self.index.contains_key(&node.id) {
            return Err(TreeError::DuplicateId(node.id));
        }
        node.check_schema()?;
        if let Some(parent_id) = &node.parent_id {
            let Some(parent) = self.get(parent_id) else {
                return Err(TreeError::DanglingParent {
                    child: node.id.clone(),
                    parent: parent_id.clone(),
                });
            };
            if node.action_kind == ActionKind::Debug && node.debug_depth != parent.debug_depth + 1 {
                return Err(TreeError::InvalidNode(
                    node.id.clone(),
                    format!(
                        "debug_depth {} does not follow parent depth {}",
                        node.debug_depth, parent.debug_depth
                    ),
                ));
            }
        }
        if let Some(last) = self.nodes.last() {
            if node.step_index <= last.step_index {
                return Err(TreeError::InvalidNode(
                    node.id.clone(),
                    format!(
                        "step_index {} not greater than previous {}",
                        node.step_index, last.step_index
                    ),
                ));
            }
        }
        if let Some(parent_id) = &node.parent_id {
            self.children
                .entry(parent_id.clone())
                .or_default()
                .push(node.id.clone());
        }
        self.index.insert(node.id.clone(), self.nodes.len());
        self.nodes.push(node);
        Ok(())
    }

    pub fn get(&self, id: &NodeId) -> Option<&SolutionNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn nodes(&self) -> &[SolutionNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn children(&self, id: &NodeId) -> &[NodeId] {
        self.children.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn roots(&self) -> impl Iterator<Item = &SolutionNode> {
        self.nodes.iter().filter(|n| n.parent_id.is_none())
    }

    pub fn draft_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.action_kind == ActionKind::Draft)
            .count()
    }

    pub fn valid_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.is_valid())
            .map(|n| n.id.clone())
            .collect()
    }

    /// Buggy nodes still worth debugging: below the depth cap and without a
    /// debug child that already fixed them.
    pub fn eligible_buggy_nodes(&self, max_debug_depth: u32) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.status == NodeStatus::Buggy && n.debug_depth < max_debug_depth)
            .filter(|n| !self.has_valid_debug_child(&n.id))
            .map(|n| n.id.clone())
            .collect()
    }

    fn has_valid_debug_child(&self, id: &NodeId) -> bool {
        self.children(id).iter().any(|c| {
            self.get(c)
                .is_some_and(|c| c.action_kind == ActionKind::Debug && c.is_valid())
        })
    }

    /// Direction of the first valid node; the run's canonical ordering.
    pub fn canonical_direction(&self) -> Option<bool> {
        self.nodes
            .iter()
            .find_map(|n| n.is_valid().then(|| n.metric.map(|m| m.lower_is_better())))
            .flatten()
    }

    /// The valid node with the best metric; the earliest one wins ties.
    pub fn best_node(&self) -> Result<Option<NodeId>, TreeError> {
        let mut best: Option<(&SolutionNode, MetricValue)> = None;
        for node in self.nodes.iter().filter(|n| n.is_valid()) {
            let Some(metric) = node.metric else { continue };
            match &best {
                None => best = Some((node, metric)),
                Some((current, current_metric)) => match metric.is_better_than(current_metric) {
                    None => return Err(TreeError::MixedMetricDirection),
                    Some(true) => best = Some((node, metric)),
                    Some(false) => {
                        if metric.value() == current_metric.value()
                            && node.step_index < current.step_index
                        {
                            best = Some((node, metric));
                        }
                    }
                },
            }
        }
        Ok(best.map(|(n, _)| n.id.clone()))
    }

    /// Coerces a valid node whose metric direction disagrees with the run's
    /// canonical direction into a buggy one.
    pub fn normalize_direction(&self, mut node: SolutionNode) -> SolutionNode {
        let (Some(canonical), Some(metric)) = (self.canonical_direction(), node.metric) else {
            return node;
        };
        if node.is_valid() && metric.lower_is_better() != canonical {
            node.status = NodeStatus::Buggy;
            node.metric = None;
            let wanted = if canonical { "lower" } else { "higher" };
            node.summary = format!(
                "{} [metric direction disagrees with the run's canonical direction ({wanted} is better); marked buggy]",
                node.summary
            );
        }
        node
    }
}

/// Keeps the first `head` and last `tail` characters of `text`, replacing the
/// middle with an elision marker.
pub fn truncate_output(text: &str, head: usize, tail: usize) -> String {
    let total = text.chars().count();
    if total <= head + tail {
        return text.to_string();
    }
    let elided = total - head - tail;
    let head_end = text.char_indices().nth(head).map_or(text.len(), |(i, _)| i);
    let tail_start = text
        .char_indices()
        .nth(total - tail)
        .map_or(text.len(), |(i, _)| i);
    format!(
        "{}\n... [{elided} characters elided] ...\n{}",
        &text[..head_end],
        &text[tail_start..]
    )
}

/// [`truncate_output`] with the default 4,000 + 4,000 character bound.
pub fn truncate_default(text: &str) -> String {
    truncate_output(text, OUTPUT_HEAD_CHARS, OUTPUT_TAIL_CHARS)
}
