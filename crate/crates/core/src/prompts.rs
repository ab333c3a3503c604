//! Prompt templates and their renderer.
//!
//! Templates live under `templates/` and use `{name}` placeholders. Rendering
//! is a single left-to-right pass, so substituted text (which often contains
//! code with braces) is never re-expanded.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::llm::ToolSchema;

/// Package list offered to the model unless configured otherwise.
pub const DEFAULT_PACKAGES: &str = include_str!("../templates/packages.txt");

/// Inserted in place of the knowledge section body when retrieval is off or
/// returned nothing.
pub const NO_KNOWLEDGE: &str = "(No knowledge is provided for this task.)";

/// Inserted in place of the memory section body before any node exists.
pub const NO_MEMORY: &str = "(No previous solutions have been explored yet.)";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template `{template}` needs a value for `{{{name}}}`")]
    MissingValue {
        template: &'static str,
        name: String,
    },
    #[error("template `{template}` has no placeholder `{{{name}}}`")]
    UnusedValue {
        template: &'static str,
        name: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Template {
    Draft,
    Debug,
    ImproveWithTricks,
    ImproveWithoutTricks,
    ComplexityScore,
    CodeOnePass,
    Decompose,
    CodeStepwise,
    Verify,
}

impl Template {
    pub const ALL: [Template; 9] = [
        Template::Draft,
        Template::Debug,
        Template::ImproveWithTricks,
        Template::ImproveWithoutTricks,
        Template::ComplexityScore,
        Template::CodeOnePass,
        Template::Decompose,
        Template::CodeStepwise,
        Template::Verify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::Draft => "draft",
            Template::Debug => "debug",
            Template::ImproveWithTricks => "improve_with_tricks",
            Template::ImproveWithoutTricks => "improve_without_tricks",
            Template::ComplexityScore => "complexity_score",
            Template::CodeOnePass => "code_one_pass",
            Template::Decompose => "decompose",
            Template::CodeStepwise => "code_stepwise",
            Template::Verify => "verify",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            Template::Draft => include_str!("../templates/draft.md"),
            Template::Debug => include_str!("../templates/debug.md"),
            Template::ImproveWithTricks => include_str!("../templates/improve_with_tricks.md"),
            Template::ImproveWithoutTricks => {
                include_str!("../templates/improve_without_tricks.md")
            }
            Template::ComplexityScore => include_str!("../templates/complexity_score.md"),
            Template::CodeOnePass => include_str!("../templates/code_one_pass.md"),
            Template::Decompose => include_str!("../templates/decompose.md"),
            Template::CodeStepwise => include_str!("../templates/code_stepwise.md"),
            Template::Verify => include_str!("../templates/verify.md"),
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(self) -> Vec<&'static str> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for piece in scan(self.source()) {
            if let Piece::Slot(name) = piece {
                if seen.insert(name) {
                    out.push(name);
                }
            }
        }
        out
    }

    /// Fills every placeholder. Missing and unused values are errors.
    pub fn render(self, values: &[(&str, &str)]) -> Result<String, PromptError> {
        let mut used = BTreeSet::new();
        let mut out = String::with_capacity(self.source().len() * 2);
        for piece in scan(self.source()) {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => {
                    let Some((_, value)) = values.iter().find(|(k, _)| *k == name) else {
                        return Err(PromptError::MissingValue {
                            template: self.name(),
                            name: name.to_string(),
                        });
                    };
                    used.insert(name);
                    out.push_str(value);
                }
            }
        }
        if let Some((k, _)) = values.iter().find(|(k, _)| !used.contains(k)) {
            return Err(PromptError::UnusedValue {
                template: self.name(),
                name: k.to_string(),
            });
        }
        Ok(out)
    }
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

/// Splits a template into literal text and `{ident}` slots, where ident is
/// lowercase ASCII letters and underscores. Anything else stays literal.
fn scan(src: &str) -> Vec<Piece<'_>> {
    let bytes = src.as_bytes();
    let mut pieces = Vec::new();
    let mut literal_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j] == b'_') {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'}' {
                if literal_start < i {
                    pieces.push(Piece::Text(&src[literal_start..i]));
                }
                pieces.push(Piece::Slot(&src[i + 1..j]));
                i = j + 1;
                literal_start = i;
                continue;
            }
        }
        i += 1;
    }
    if literal_start < src.len() {
        pieces.push(Piece::Text(&src[literal_start..]));
    }
    pieces
}

/// The `submission_verify` tool offered to the verifier.
pub fn submission_verify_tool() -> ToolSchema {
    serde_json::from_str(include_str!("../templates/submission_verify.json"))
        .expect("bundled tool schema is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholders_match_field_names() {
        assert_eq!(
            Template::Draft.placeholders(),
            [
                "task_description",
                "memory",
                "tricks",
                "data_analysis",
                "packages"
            ]
        );
        assert_eq!(
            Template::Debug.placeholders(),
            [
                "task_description",
                "prev_plan",
                "prev_code",
                "prev_output",
                "data_analysis",
                "packages"
            ]
        );
        assert_eq!(
            Template::ImproveWithTricks.placeholders(),
            [
                "task_description",
                "memory",
                "prev_plan",
                "prev_code",
                "prev_output",
                "tricks",
                "data_analysis",
                "packages"
            ]
        );
        assert!(!Template::ImproveWithoutTricks
            .placeholders()
            .contains(&"tricks"));
        assert_eq!(
            Template::ComplexityScore.placeholders(),
            ["task_description", "proposed_solution", "data_analysis"]
        );
        assert_eq!(
            Template::Decompose.placeholders(),
            ["task_description", "proposed_solution"]
        );
        assert_eq!(
            Template::CodeStepwise.placeholders(),
            [
                "task_description",
                "current_step",
                "prev_steps",
                "data_analysis",
                "packages"
            ]
        );
        assert_eq!(
            Template::Verify.placeholders(),
            ["task_description", "code", "execution_output"]
        );
    }

    #[test]
    fn substituted_braces_are_not_expanded() {
        let out = Template::Decompose
            .render(&[
                ("task_description", "{proposed_solution}"),
                ("proposed_solution", "p"),
            ])
            .unwrap();
        assert!(out.contains("# Task description\n\n{proposed_solution}\n"));
        // The literal JSON example survives.
        assert!(out.contains("\"decomposed steps\": ["));
    }

    #[test]
    fn missing_and_unused_values_are_errors() {
        assert!(matches!(
            Template::Decompose.render(&[("task_description", "t")]),
            Err(PromptError::MissingValue { .. })
        ));
        assert!(matches!(
            Template::Decompose.render(&[
                ("task_description", "t"),
                ("proposed_solution", "p"),
                ("memory", "m")
            ]),
            Err(PromptError::UnusedValue { .. })
        ));
    }

    #[test]
    fn tool_schema_requires_all_six_fields() {
        let tool = submission_verify_tool();
        assert_eq!(tool.name, "submission_verify");
        let required: Vec<&str> = tool.parameters["required"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap())
            .collect();
        assert_eq!(
            required,
            [
                "is_bug",
                "is_overfitting",
                "has_csv_submission",
                "summary",
                "metric",
                "lower_is_better"
            ]
        );
    }

    #[test]
    fn default_packages_cover_the_listed_libraries() {
        assert!(DEFAULT_PACKAGES.contains("'lightgbm==4.5.0'"));
        assert!(DEFAULT_PACKAGES.trim_end().ends_with("'seaborn==0.13.2'"));
    }
}
