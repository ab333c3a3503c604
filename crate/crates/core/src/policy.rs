//! Search policy: picks the parent node and the next action.
//!
//! The policy is a fixed cascade of rules gated by coin flips:
//!
//! 1. while fewer than `n_init` drafts exist, draft;
//! 2. with probability `h_debug`, debug a random eligible buggy node;
//! 3. with probability `h_greedy`, improve the best node, otherwise improve a
//!    uniformly random valid node;
//! 4. with nothing to debug or improve, draft.
//!
//! Improve decisions additionally flip `h_trick` to decide whether retrieved
//! tricks are injected into the improve prompt.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::{ActionKind, NodeId, SolutionTree};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyConfigError {
    #[error("{name} must lie in [0, 1], got {value}")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    #[error("{0} must be at least 1")]
    NotPositive(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub n_init: usize,
    pub h_debug: f64,
    pub h_greedy: f64,
    pub h_trick: f64,
    pub max_debug_depth: u32,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            n_init: 5,
            h_debug: 1.0,
            h_greedy: 0.8,
            h_trick: 0.8,
            max_debug_depth: 20,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyConfigError> {
        for (name, value) in [
            ("debug_prob", self.h_debug),
            ("greedy_prob", self.h_greedy),
            ("trick_prob", self.h_trick),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(PolicyConfigError::ProbabilityOutOfRange { name, value });
            }
        }
        if self.n_init == 0 {
            return Err(PolicyConfigError::NotPositive("num_drafts"));
        }
        if self.max_debug_depth == 0 {
            return Err(PolicyConfigError::NotPositive("max_debug_depth"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDecision {
    pub parent: Option<NodeId>,
    pub action: ActionKind,
    pub with_tricks: bool,
}

impl PolicyDecision {
    pub fn draft() -> Self {
        Self {
            parent: None,
            action: ActionKind::Draft,
            with_tricks: false,
        }
    }
}

/// Seeded pseudo-random stream; identical seeds and call sequences replay
/// identical draws.
#[derive(Debug, Clone)]
pub struct RandomSource {
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn seeded(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform real in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform choice; `None` for an empty slice (no draw is consumed).
    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> Option<&'a T> {
        if items.is_empty() {
            return None;
        }
        let i = self.rng.random_range(0..items.len());
        items.get(i)
    }
}

/// Which rule of the cascade produced a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    InitialDraft,
    Debug,
    GreedyImprove,
    RandomImprove,
    FallbackDraft,
}

/// Everything the policy looked at and drew while deciding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTrace {
    pub branch: Branch,
    pub draft_count: usize,
    pub p_debug: Option<f64>,
    pub p_greedy: Option<f64>,
    pub p_trick: Option<f64>,
    pub eligible_buggy: Vec<NodeId>,
    pub valid: Vec<NodeId>,
    pub best: Option<NodeId>,
}

pub fn select(
    tree: &SolutionTree,
    config: &PolicyConfig,
    rng: &mut RandomSource,
) -> PolicyDecision {
    decision_trace(tree, config, rng).0
}

pub fn decision_trace(
    tree: &SolutionTree,
    config: &PolicyConfig,
    rng: &mut RandomSource,
) -> (PolicyDecision, PolicyTrace) {
    let mut trace = PolicyTrace {
        branch: Branch::InitialDraft,
        draft_count: tree.draft_count(),
        p_debug: None,
        p_greedy: None,
        p_trick: None,
        eligible_buggy: Vec::new(),
        valid: Vec::new(),
        best: None,
    };
    if trace.draft_count < config.n_init {
        return (PolicyDecision::draft(), trace);
    }

    let p_debug = rng.uniform();
    trace.p_debug = Some(p_debug);
    trace.eligible_buggy = tree.eligible_buggy_nodes(config.max_debug_depth);
    let buggy = rng.choose(&trace.eligible_buggy).cloned();
    if let Some(buggy) = buggy.filter(|_| p_debug < config.h_debug) {
        trace.branch = Branch::Debug;
        let decision = PolicyDecision {
            parent: Some(buggy),
            action: ActionKind::Debug,
            with_tricks: false,
        };
        return (decision, trace);
    }

    let p_greedy = rng.uniform();
    trace.p_greedy = Some(p_greedy);
    // Direction conflicts are normalized before insertion; treat one as "no best".
    trace.best = tree.best_node().ok().flatten();
    trace.valid = tree.valid_nodes();
    let non_greedy = rng.choose(&trace.valid).cloned();
    let improve_target = match (&trace.best, non_greedy) {
        (Some(best), _) if p_greedy < config.h_greedy => {
            trace.branch = Branch::GreedyImprove;
            Some(best.clone())
        }
        (Some(_), Some(random)) => {
            trace.branch = Branch::RandomImprove;
            Some(random)
        }
        _ => None,
    };

    match improve_target {
        Some(parent) => {
            let p_trick = rng.uniform();
            trace.p_trick = Some(p_trick);
            let decision = PolicyDecision {
                parent: Some(parent),
                action: ActionKind::Improve,
                with_tricks: p_trick < config.h_trick,
            };
            (decision, trace)
        }
        None => {
            trace.branch = Branch::FallbackDraft;
            (PolicyDecision::draft(), trace)
        }
    }
}
