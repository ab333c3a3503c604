use tracing::warn;

use super::{
    label_entry, summarize_paper, Corpus, Embedder, KnowledgeEntry, KnowledgeError, KnowledgeIndex,
    Taxonomy,
};
use crate::llm::{Gateway, LlmError};

/// What [`build_index`] did to the corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub tricks: usize,
    pub papers: usize,
    pub labeled: Vec<String>,
    pub summarized: Vec<String>,
    /// Entries left unlabeled or unsummarized, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Turns an ingested corpus into an index. With a gateway, unlabeled tricks
/// are labeled and papers without a complete summary are summarized; a
/// failure on one entry is reported and the entry kept as is. Without a
/// gateway entries are indexed exactly as written. Budget exhaustion aborts.
pub fn build_index(
    corpus: Corpus,
    llm: Option<&Gateway>,
    taxonomy: &Taxonomy,
    embedder: &dyn Embedder,
    label_rounds: usize,
) -> Result<(KnowledgeIndex, BuildReport), KnowledgeError> {
    let mut report = BuildReport {
        tricks: corpus.tricks.len(),
        papers: corpus.papers.len(),
        ..BuildReport::default()
    };
    let mut entries = Vec::with_capacity(report.tricks + report.papers);

    for mut trick in corpus.tricks {
        if trick.labels.is_empty() {
            match llm {
                Some(llm) => match label_entry(&trick, taxonomy, llm, label_rounds) {
                    Ok(labels) => {
                        trick.labels = labels;
                        report.labeled.push(trick.id.clone());
                    }
                    Err(e) => skip(&mut report, &trick.id, e)?,
                },
                None => report.skipped.push((trick.id.clone(), "no labels".into())),
            }
        }
        entries.push(KnowledgeEntry::Trick(trick));
    }
    for mut paper in corpus.papers {
        if !paper.summary.is_complete() {
            match llm {
                Some(llm) => match summarize_paper(&paper, llm) {
                    Ok(summary) => {
                        paper.summary = summary;
                        report.summarized.push(paper.id.clone());
                    }
                    Err(e) => skip(&mut report, &paper.id, e)?,
                },
                None => report.skipped.push((paper.id.clone(), "no summary".into())),
            }
        }
        entries.push(KnowledgeEntry::Paper(paper));
    }
    let index = KnowledgeIndex::build(entries, embedder)?;
    Ok((index, report))
}

fn skip(report: &mut BuildReport, id: &str, e: KnowledgeError) -> Result<(), KnowledgeError> {
    if let KnowledgeError::Llm(LlmError::BudgetExceeded { .. }) = e {
        return Err(e);
    }
    warn!(entry = id, %e, "keeping entry without model annotations");
    report.skipped.push((id.to_string(), e.to_string()));
    Ok(())
}
