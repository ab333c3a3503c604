use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{cosine, Embedder, KnowledgeEntry, KnowledgeError, KnowledgeQuery};

const ENTRIES_FILE: &str = "entries.jsonl";
const VECTORS_FILE: &str = "vectors.bin";
const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexMeta {
    dim: usize,
    count: usize,
    embedder: String,
}

/// A retrieval hit. `label_rank` is the position of the first query label
/// the entry matched (absent for paper hits).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEntry {
    pub entry: KnowledgeEntry,
    pub similarity: f32,
    pub label_rank: Option<usize>,
}

/// Immutable embedded collection of tricks and papers.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeIndex {
    entries: Vec<KnowledgeEntry>,
    vectors: Vec<Vec<f32>>,
    dim: usize,
    embedder: String,
}

impl KnowledgeIndex {
    pub fn build(
        entries: Vec<KnowledgeEntry>,
        embedder: &dyn Embedder,
    ) -> Result<Self, KnowledgeError> {
        let dim = embedder.dim();
        let mut seen = HashSet::new();
        let mut vectors = Vec::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.id().to_string()) {
                return Err(KnowledgeError::Precondition(format!(
                    "duplicate entry id `{}`",
                    e.id()
                )));
            }
            let v = embedder.embed(&e.embedding_text())?;
            if v.len() != dim {
                return Err(KnowledgeError::EmbedderFailure(format!(
                    "expected {dim} dimensions, got {}",
                    v.len()
                )));
            }
            vectors.push(v);
        }
        Ok(Self {
            entries,
            vectors,
            dim,
            embedder: embedder.name(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedder_name(&self) -> &str {
        &self.embedder
    }

    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    fn embed_query(&self, embedder: &dyn Embedder, text: &str) -> Result<Vec<f32>, KnowledgeError> {
        if embedder.name() != self.embedder {
            return Err(KnowledgeError::EmbedderFailure(format!(
                "index was built with `{}`, query uses `{}`",
                self.embedder,
                embedder.name()
            )));
        }
        embedder.embed(text)
    }

    /// Tricks for a task. Entries are bucketed by the query labels in
    /// priority order, entries from the query's own task are dropped, and
    /// hits are ranked by (label rank, descending similarity, id). A query
    /// without labels ranks all tricks by similarity alone.
    pub fn retrieve(
        &self,
        embedder: &dyn Embedder,
        query: &KnowledgeQuery,
    ) -> Result<Vec<ScoredEntry>, KnowledgeError> {
        if query.k == 0 {
            return Err(KnowledgeError::Precondition("k must be at least 1".into()));
        }
        let q = self.embed_query(embedder, &query.free_text)?;
        let mut hits = Vec::new();
        let mut taken = HashSet::new();
        for (i, entry) in self.entries.iter().enumerate() {
            let KnowledgeEntry::Trick(trick) = entry else {
                continue;
            };
            if trick.source_task_id == query.task_id {
                continue;
            }
            let rank = if query.task_labels.is_empty() {
                Some(0)
            } else {
                query
                    .task_labels
                    .iter()
                    .position(|l| trick.labels.contains(l))
            };
            if let Some(rank) = rank {
                if taken.insert(i) {
                    hits.push(ScoredEntry {
                        entry: entry.clone(),
                        similarity: cosine(&q, &self.vectors[i]),
                        label_rank: Some(rank),
                    });
                }
            }
        }
        hits.sort_by(|a, b| {
            a.label_rank
                .cmp(&b.label_rank)
                .then_with(|| by_similarity_then_id(a, b))
        });
        hits.truncate(query.k);
        Ok(hits)
    }

    /// Papers ranked by similarity of their summaries to `text`.
    pub fn retrieve_papers(
        &self,
        embedder: &dyn Embedder,
        text: &str,
        k: usize,
    ) -> Result<Vec<ScoredEntry>, KnowledgeError> {
        if k == 0 {
            return Err(KnowledgeError::Precondition("k must be at least 1".into()));
        }
        let q = self.embed_query(embedder, text)?;
        let mut hits: Vec<ScoredEntry> = self
            .entries
            .iter()
            .zip(&self.vectors)
            .filter(|(e, _)| matches!(e, KnowledgeEntry::Paper(_)))
            .map(|(e, v)| ScoredEntry {
                entry: e.clone(),
                similarity: cosine(&q, v),
                label_rank: None,
            })
            .collect();
        hits.sort_by(by_similarity_then_id);
        hits.truncate(k);
        Ok(hits)
    }

    /// Writes `entries.jsonl`, `vectors.bin` (little-endian f32, row-major)
    /// and `meta.json` into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<(), KnowledgeError> {
        fs::create_dir_all(dir).map_err(|e| KnowledgeError::io(dir, e))?;

        let path = dir.join(ENTRIES_FILE);
        let file = fs::File::create(&path).map_err(|e| KnowledgeError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for e in &self.entries {
            let line = serde_json::to_string(e).expect("entries serialize");
            writeln!(w, "{line}").map_err(|e| KnowledgeError::io(&path, e))?;
        }
        w.flush().map_err(|e| KnowledgeError::io(&path, e))?;

        let path = dir.join(VECTORS_FILE);
        let mut bytes = Vec::with_capacity(self.vectors.len() * self.dim * 4);
        for v in &self.vectors {
            for x in v {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        fs::write(&path, bytes).map_err(|e| KnowledgeError::io(&path, e))?;

        let path = dir.join(META_FILE);
        let meta = IndexMeta {
            dim: self.dim,
            count: self.entries.len(),
            embedder: self.embedder.clone(),
        };
        let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
        fs::write(&path, text).map_err(|e| KnowledgeError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self, KnowledgeError> {
        let path = dir.join(META_FILE);
        let text = fs::read_to_string(&path).map_err(|e| KnowledgeError::io(&path, e))?;
        let meta: IndexMeta = serde_json::from_str(&text)
            .map_err(|e| KnowledgeError::CorruptIndex(format!("{META_FILE}: {e}")))?;
        if meta.dim == 0 {
            return Err(KnowledgeError::CorruptIndex("zero dimension".into()));
        }

        let path = dir.join(ENTRIES_FILE);
        let file = fs::File::open(&path).map_err(|e| KnowledgeError::io(&path, e))?;
        let mut entries = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| KnowledgeError::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| {
                KnowledgeError::CorruptIndex(format!("{ENTRIES_FILE} line {}: {e}", n + 1))
            })?);
        }

        let path = dir.join(VECTORS_FILE);
        let bytes = fs::read(&path).map_err(|e| KnowledgeError::io(&path, e))?;
        if entries.len() != meta.count || bytes.len() != meta.count * meta.dim * 4 {
            return Err(KnowledgeError::CorruptIndex(format!(
                "expected {} entries of dimension {}, found {} entries and {} vector bytes",
                meta.count,
                meta.dim,
                entries.len(),
                bytes.len()
            )));
        }
        let vectors = bytes
            .chunks_exact(meta.dim * 4)
            .map(|row| {
                row.chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect()
            })
            .collect();
        Ok(Self {
            entries,
            vectors,
            dim: meta.dim,
            embedder: meta.embedder,
        })
    }
}

fn by_similarity_then_id(a: &ScoredEntry, b: &ScoredEntry) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.entry.id().cmp(b.entry.id()))
}
