use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use tracing::warn;

use super::{KnowledgeError, LabelPath, PaperEntry, PaperMeta, PaperSummary, TrickEntry};

/// A source file that was skipped, with the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub tricks: Vec<TrickEntry>,
    pub papers: Vec<PaperEntry>,
    pub warnings: Vec<ParseWarning>,
}

/// Reads `tricks/<task_id>/<post_id>.md` and `papers/<paper_id>.md` under
/// `root`. Each file starts with `key: value` header lines, then a blank
/// line, then the body. Malformed files become warnings. Entries come back
/// sorted by id.
pub fn ingest_corpus(root: &Path) -> Result<Corpus, KnowledgeError> {
    if !root.is_dir() {
        return Err(KnowledgeError::MissingCorpus(root.display().to_string()));
    }
    let mut corpus = Corpus::default();

    let tricks_dir = root.join("tricks");
    if tricks_dir.is_dir() {
        for task_dir in sorted_children(&tricks_dir)? {
            if !task_dir.is_dir() {
                continue;
            }
            let task_id = file_stem(&task_dir);
            for file in sorted_children(&task_dir)? {
                if !is_markdown(&file) {
                    continue;
                }
                match parse_trick(&file, &task_id) {
                    Ok(t) => corpus.tricks.push(t),
                    Err(reason) => corpus.warnings.push(ParseWarning { path: file, reason }),
                }
            }
        }
    }

    let papers_dir = root.join("papers");
    if papers_dir.is_dir() {
        for file in sorted_children(&papers_dir)? {
            if !is_markdown(&file) {
                continue;
            }
            match parse_paper(&file) {
                Ok(p) => corpus.papers.push(p),
                Err(reason) => corpus.warnings.push(ParseWarning { path: file, reason }),
            }
        }
    }

    for w in &corpus.warnings {
        warn!(path = %w.path.display(), reason = %w.reason, "skipping corpus file");
    }
    corpus.tricks.sort_by(|a, b| a.id.cmp(&b.id));
    corpus.papers.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(corpus)
}

fn sorted_children(dir: &Path) -> Result<Vec<PathBuf>, KnowledgeError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| KnowledgeError::io(dir, e))? {
        out.push(entry.map_err(|e| KnowledgeError::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn is_markdown(path: &Path) -> bool {
    path.is_file() && path.extension().is_some_and(|e| e == "md")
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Splits a file into its header map and body.
fn split_header(text: &str) -> Result<(BTreeMap<String, String>, String), String> {
    let text = text.replace("\r\n", "\n");
    let Some((head, body)) = text.split_once("\n\n") else {
        return Err("no blank line after the header block".into());
    };
    let mut header = BTreeMap::new();
    for line in head.lines() {
        let Some((k, v)) = line.split_once(':') else {
            return Err(format!("header line without `key:` prefix: {line:?}"));
        };
        let key = k.trim().to_ascii_lowercase();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(format!("bad header key in {line:?}"));
        }
        header.insert(key, v.trim().to_string());
    }
    let body = body.trim().to_string();
    if body.is_empty() {
        return Err("empty body".into());
    }
    Ok((header, body))
}

fn read(path: &Path) -> Result<String, String> {
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    String::from_utf8(bytes).map_err(|_| "not valid UTF-8".to_string())
}

fn parse_trick(path: &Path, task_dir: &str) -> Result<TrickEntry, String> {
    let (header, body) = split_header(&read(path)?)?;
    let title = header
        .get("title")
        .filter(|t| !t.is_empty())
        .ok_or("missing `title` header")?
        .clone();
    let source_task_id = header
        .get("source_task_id")
        .filter(|t| !t.is_empty())
        .cloned()
        .unwrap_or_else(|| task_dir.to_string());
    // Optional pre-assigned labels: `labels: Top/Sub; Top/Sub`.
    let labels = match header.get("labels") {
        Some(text) => text
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|s| LabelPath::parse(s).ok_or_else(|| format!("bad label {s:?}")))
            .collect::<Result<Vec<_>, _>>()?,
        None => Vec::new(),
    };
    Ok(TrickEntry {
        id: format!("{task_dir}/{}", file_stem(path)),
        source_task_id,
        title,
        body,
        labels,
    })
}

fn parse_paper(path: &Path) -> Result<PaperEntry, String> {
    let (header, body) = split_header(&read(path)?)?;
    let get = |k: &str| header.get(k).cloned().unwrap_or_default();
    let meta = PaperMeta {
        title: get("title"),
        authors: get("authors"),
        abstract_text: get("abstract"),
        keywords: get("keywords"),
        venue: get("venue"),
        year: get("year"),
    };
    if meta.title.is_empty() {
        return Err("missing `title` header".into());
    }
    // Summary fields may be supplied up front to skip summarization.
    let mut summary = PaperSummary::default();
    for name in PaperSummary::FIELDS {
        if let Some(v) = header.get(name) {
            *summary.field_mut(name).expect("known field") = v.clone();
        }
    }
    Ok(PaperEntry {
        id: file_stem(path),
        meta,
        body,
        summary,
    })
}
