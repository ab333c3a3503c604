use serde_json::Value;

use super::{KnowledgeError, PaperEntry, PaperSummary};
use crate::llm::{ChatRequest, Gateway, Role};

const SUMMARY_PROMPT: &str =
    "Summarize the following research paper for a machine learning practitioner.

# Title
{title}

# Abstract
{abstract}

# Keywords
{keywords}

# Paper
{body}

Respond with a single JSON object with exactly these string fields:
- \"data_type\": the type of data used (e.g. images, text, tabular)
- \"data_domain\": the application domain of the data
- \"dataset_names\": the datasets used or introduced
- \"ml_tasks\": the machine learning tasks addressed
- \"techniques\": the main techniques and models
- \"contributions\": the key contributions and findings";

/// Asks the model for the six-field structured summary of a paper.
pub fn summarize_paper(entry: &PaperEntry, llm: &Gateway) -> Result<PaperSummary, KnowledgeError> {
    if entry.body.trim().is_empty() {
        return Err(KnowledgeError::Precondition(format!(
            "paper `{}` has an empty body",
            entry.id
        )));
    }
    let prompt = SUMMARY_PROMPT
        .replace("{title}", &entry.meta.title)
        .replace("{abstract}", &entry.meta.abstract_text)
        .replace("{keywords}", &entry.meta.keywords)
        .replace("{body}", entry.body.trim());
    let reply = llm.complete(&ChatRequest::prompt(Role::Retriever, prompt))?;
    parse_summary(reply.content())
}

fn parse_summary(text: &str) -> Result<PaperSummary, KnowledgeError> {
    let object = match (text.find('{'), text.rfind('}')) {
        (Some(s), Some(e)) if s < e => {
            serde_json::from_str::<Value>(&text[s..=e]).map_err(|err| {
                KnowledgeError::SchemaViolation(format!("summary is not JSON: {err}"))
            })?
        }
        _ => {
            return Err(KnowledgeError::SchemaViolation(
                "summary response has no JSON object".into(),
            ))
        }
    };
    let mut summary = PaperSummary::default();
    for name in PaperSummary::FIELDS {
        let value = match object.get(name) {
            Some(Value::String(s)) => s.trim().to_string(),
            Some(Value::Array(items)) => items
                .iter()
                .filter_map(Value::as_str)
                .collect::<Vec<_>>()
                .join(", "),
            _ => String::new(),
        };
        if value.is_empty() {
            return Err(KnowledgeError::SchemaViolation(format!(
                "summary field `{name}` is missing or empty"
            )));
        }
        *summary.field_mut(name).expect("known field") = value;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::PaperMeta;
    use crate::llm::{ChatResponse, FnBackend, RoleModelConfig};

    fn paper(body: &str) -> PaperEntry {
        PaperEntry {
            id: "p".into(),
            meta: PaperMeta {
                title: "T".into(),
                ..PaperMeta::default()
            },
            body: body.into(),
            summary: PaperSummary::default(),
        }
    }

    fn gateway(reply: &'static str) -> Gateway {
        Gateway::new(
            RoleModelConfig::default(),
            FnBackend(move |_: &ChatRequest| Ok(ChatResponse::text(reply))),
        )
    }

    #[test]
    fn six_fields_are_parsed() {
        let gw = gateway(
            r#"```json
{"data_type": "tabular", "data_domain": "finance", "dataset_names": ["A", "B"],
 "ml_tasks": "regression", "techniques": "GBDT", "contributions": "new loss"}
```"#,
        );
        let s = summarize_paper(&paper("text"), &gw).unwrap();
        assert!(s.is_complete());
        assert_eq!(s.dataset_names, "A, B");
    }

    #[test]
    fn missing_field_is_schema_violation() {
        let gw = gateway(
            r#"{"data_type": "x", "data_domain": "x", "dataset_names": "x", "ml_tasks": "x", "contributions": "x"}"#,
        );
        let err = summarize_paper(&paper("text"), &gw).unwrap_err();
        assert!(matches!(err, KnowledgeError::SchemaViolation(ref m) if m.contains("techniques")));
    }

    #[test]
    fn empty_body_is_rejected() {
        assert!(matches!(
            summarize_paper(&paper("  "), &gateway("{}")),
            Err(KnowledgeError::Precondition(_))
        ));
    }
}
