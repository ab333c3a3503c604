use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{KnowledgeError, LabelPath};

const DEFAULT_TAXONOMY: &str = include_str!("../../data/taxonomy.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub subcategories: Vec<String>,
}

/// Two-level label hierarchy. Order matters: it is the tie-break for votes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    categories: Vec<Category>,
}

impl Taxonomy {
    pub fn new(categories: Vec<Category>) -> Result<Self, KnowledgeError> {
        let t = Self { categories };
        t.validate()?;
        Ok(t)
    }

    /// The bundled eleven-category taxonomy.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, KnowledgeError> {
        let t: Self = serde_json::from_str(text)
            .map_err(|e| KnowledgeError::InvalidTaxonomy(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        let text = std::fs::read_to_string(path).map_err(|e| KnowledgeError::io(path, e))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<(), KnowledgeError> {
        if self.categories.is_empty() {
            return Err(KnowledgeError::InvalidTaxonomy("no categories".into()));
        }
        let mut tops = HashSet::new();
        let mut subs = HashSet::new();
        for c in &self.categories {
            if c.name.trim().is_empty() || c.name.contains('/') {
                return Err(KnowledgeError::InvalidTaxonomy(format!(
                    "bad category name `{}`",
                    c.name
                )));
            }
            if !tops.insert(c.name.as_str()) {
                return Err(KnowledgeError::InvalidTaxonomy(format!(
                    "duplicate category `{}`",
                    c.name
                )));
            }
            if c.subcategories.is_empty() {
                return Err(KnowledgeError::InvalidTaxonomy(format!(
                    "category `{}` has no subcategories",
                    c.name
                )));
            }
            for s in &c.subcategories {
                if s.trim().is_empty() || s.contains('/') {
                    return Err(KnowledgeError::InvalidTaxonomy(format!(
                        "bad subcategory `{s}`"
                    )));
                }
                // Subcategories belong to exactly one top category.
                if !subs.insert(s.as_str()) {
                    return Err(KnowledgeError::InvalidTaxonomy(format!(
                        "subcategory `{s}` appears under more than one category"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn top_names(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().map(|c| c.name.as_str())
    }

    pub fn category(&self, top: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.name == top)
    }

    /// Position of a label in depth-first taxonomy order.
    pub fn position(&self, label: &LabelPath) -> Option<usize> {
        let mut offset = 0;
        for c in &self.categories {
            if c.name == label.top {
                return c
                    .subcategories
                    .iter()
                    .position(|s| *s == label.sub)
                    .map(|i| offset + i);
            }
            offset += c.subcategories.len();
        }
        None
    }

    pub fn contains(&self, label: &LabelPath) -> bool {
        self.position(label).is_some()
    }

    /// Resolves a bare subcategory name to its unique full path.
    pub fn resolve_sub(&self, sub: &str) -> Option<LabelPath> {
        self.categories.iter().find_map(|c| {
            c.subcategories
                .iter()
                .find(|s| s.eq_ignore_ascii_case(sub))
                .map(|s| LabelPath::new(&c.name, s))
        })
    }

    /// Parses `Top/Sub` or a bare subcategory into a known label.
    pub fn parse_label(&self, text: &str) -> Result<LabelPath, KnowledgeError> {
        let label = match LabelPath::parse(text) {
            Some(l) => self.category_ci(&l.top).and_then(|c| {
                c.subcategories
                    .iter()
                    .find(|s| s.eq_ignore_ascii_case(&l.sub))
                    .map(|s| LabelPath::new(&c.name, s))
            }),
            None => self.resolve_sub(text.trim()),
        };
        label.ok_or_else(|| KnowledgeError::UnknownLabel(text.trim().to_string()))
    }

    pub(crate) fn category_ci(&self, top: &str) -> Option<&Category> {
        self.categories
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(top.trim()))
    }
}
