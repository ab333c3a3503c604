//! Expert knowledge base: competition tricks and research papers, labeled
//! against a hierarchical taxonomy and served by label-bucketed similarity
//! search.

mod build;
mod corpus;
mod embed;
mod index;
mod labeling;
mod summary;
mod taxonomy;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::LlmError;

pub use build::{build_index, BuildReport};
pub use corpus::{ingest_corpus, Corpus, ParseWarning};
pub use embed::{cosine, Embedder, HashEmbedder};
pub use index::{KnowledgeIndex, ScoredEntry};
pub use labeling::{label_entry, label_task, label_text, tally_votes};
pub use summary::summarize_paper;
pub use taxonomy::{Category, Taxonomy};

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("corpus directory not found: {0}")]
    MissingCorpus(String),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),
    #[error("label `{0}` is not in the taxonomy")]
    UnknownLabel(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("no usable labels after {rounds} labeling rounds")]
    NoLabels { rounds: usize },
    #[error("embedding failed: {0}")]
    EmbedderFailure(String),
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

impl KnowledgeError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        KnowledgeError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

/// A (top category, subcategory) pair. Rendered and parsed as `Top/Sub`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelPath {
    pub top: String,
    pub sub: String,
}

impl LabelPath {
    pub fn new(top: impl Into<String>, sub: impl Into<String>) -> Self {
        Self {
            top: top.into(),
            sub: sub.into(),
        }
    }

    /// Parses `Top/Sub`, trimming whitespace around both halves.
    pub fn parse(text: &str) -> Option<Self> {
        let (top, sub) = text.split_once('/')?;
        let (top, sub) = (top.trim(), sub.trim());
        if top.is_empty() || sub.is_empty() {
            return None;
        }
        Some(Self::new(top, sub))
    }
}

impl fmt::Display for LabelPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.top, self.sub)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrickEntry {
    pub id: String,
    pub source_task_id: String,
    pub title: String,
    pub body: String,
    /// Highest-priority label first.
    #[serde(default)]
    pub labels: Vec<LabelPath>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperMeta {
    pub title: String,
    #[serde(default)]
    pub authors: String,
    #[serde(default)]
    pub abstract_text: String,
    #[serde(default)]
    pub keywords: String,
    #[serde(default)]
    pub venue: String,
    #[serde(default)]
    pub year: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperSummary {
    pub data_type: String,
    pub data_domain: String,
    pub dataset_names: String,
    pub ml_tasks: String,
    pub techniques: String,
    pub contributions: String,
}

impl PaperSummary {
    pub const FIELDS: [&'static str; 6] = [
        "data_type",
        "data_domain",
        "dataset_names",
        "ml_tasks",
        "techniques",
        "contributions",
    ];

    pub fn is_complete(&self) -> bool {
        self.fields().iter().all(|(_, v)| !v.trim().is_empty())
    }

    pub fn fields(&self) -> [(&'static str, &str); 6] {
        [
            ("data_type", &self.data_type),
            ("data_domain", &self.data_domain),
            ("dataset_names", &self.dataset_names),
            ("ml_tasks", &self.ml_tasks),
            ("techniques", &self.techniques),
            ("contributions", &self.contributions),
        ]
    }

    pub(crate) fn field_mut(&mut self, name: &str) -> Option<&mut String> {
        Some(match name {
            "data_type" => &mut self.data_type,
            "data_domain" => &mut self.data_domain,
            "dataset_names" => &mut self.dataset_names,
            "ml_tasks" => &mut self.ml_tasks,
            "techniques" => &mut self.techniques,
            "contributions" => &mut self.contributions,
            _ => return None,
        })
    }

    /// `field: value` lines in fixed order; the text papers are embedded by.
    pub fn render(&self) -> String {
        self.fields()
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperEntry {
    pub id: String,
    pub meta: PaperMeta,
    pub body: String,
    #[serde(default)]
    pub summary: PaperSummary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KnowledgeEntry {
    Trick(TrickEntry),
    Paper(PaperEntry),
}

impl KnowledgeEntry {
    pub fn id(&self) -> &str {
        match self {
            KnowledgeEntry::Trick(t) => &t.id,
            KnowledgeEntry::Paper(p) => &p.id,
        }
    }

    /// Text fed to the embedder: title and body for tricks, the structured
    /// summary for papers (title and abstract until summarized).
    pub fn embedding_text(&self) -> String {
        match self {
            KnowledgeEntry::Trick(t) => format!("{}\n{}", t.title, t.body),
            KnowledgeEntry::Paper(p) if p.summary.is_complete() => p.summary.render(),
            KnowledgeEntry::Paper(p) => format!("{}\n{}", p.meta.title, p.meta.abstract_text),
        }
    }

    /// Prompt-ready rendering used in the Knowledge section of plans.
    pub fn render(&self) -> String {
        match self {
            KnowledgeEntry::Trick(t) => format!("## {}\n{}", t.title, t.body.trim()),
            KnowledgeEntry::Paper(p) => {
                format!("## {}\n{}", p.meta.title, p.summary.render())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeQuery {
    pub task_id: String,
    /// Highest-priority label first.
    pub task_labels: Vec<LabelPath>,
    pub free_text: String,
    pub k: usize,
}
