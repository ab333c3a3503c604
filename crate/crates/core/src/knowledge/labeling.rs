use std::collections::HashMap;

use serde_json::Value;
use tracing::warn;

use super::{KnowledgeError, LabelPath, Taxonomy, TrickEntry};
use crate::llm::{ChatRequest, Gateway, Role};

const TOP_PROMPT: &str = "You are labeling machine learning content with technical categories.

# Content
{content}

# Top-level categories
{categories}

Select the most relevant top-level categories for the content above, most relevant first. Respond with a JSON array of category names, for example [\"Computer Vision\"], and nothing else.";

const SUB_PROMPT: &str = "You are labeling machine learning content with technical categories.

# Content
{content}

# Candidate labels
{labels}

Select the most appropriate labels for the content above, most appropriate first. Respond with a JSON array of labels written exactly as listed, for example [\"Computer Vision/Image Classification\"], and nothing else.";

/// Labels a trick from its title and body.
pub fn label_entry(
    entry: &TrickEntry,
    taxonomy: &Taxonomy,
    llm: &Gateway,
    rounds: usize,
) -> Result<Vec<LabelPath>, KnowledgeError> {
    if entry.body.trim().is_empty() {
        return Err(KnowledgeError::Precondition(format!(
            "trick `{}` has an empty body",
            entry.id
        )));
    }
    label_text(
        &format!("{}\n\n{}", entry.title, entry.body),
        taxonomy,
        llm,
        rounds,
    )
}

/// Labels a task description with the same procedure used for tricks.
pub fn label_task(
    description: &str,
    taxonomy: &Taxonomy,
    llm: &Gateway,
    rounds: usize,
) -> Result<Vec<LabelPath>, KnowledgeError> {
    label_text(description, taxonomy, llm, rounds)
}

/// Runs `rounds` independent two-stage labelings (top categories, then
/// subcategories within them) and merges them by vote.
pub fn label_text(
    content: &str,
    taxonomy: &Taxonomy,
    llm: &Gateway,
    rounds: usize,
) -> Result<Vec<LabelPath>, KnowledgeError> {
    if rounds == 0 {
        return Err(KnowledgeError::Precondition(
            "rounds must be at least 1".into(),
        ));
    }
    let mut ballots = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        ballots.push(one_round(content, taxonomy, llm)?);
    }
    let labels = tally_votes(&ballots, taxonomy);
    if labels.is_empty() {
        return Err(KnowledgeError::NoLabels { rounds });
    }
    Ok(labels)
}

fn one_round(
    content: &str,
    taxonomy: &Taxonomy,
    llm: &Gateway,
) -> Result<Vec<LabelPath>, KnowledgeError> {
    let categories = taxonomy
        .top_names()
        .map(|n| format!("- {n}"))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = TOP_PROMPT
        .replace("{content}", content.trim())
        .replace("{categories}", &categories);
    let reply = llm.complete(&ChatRequest::prompt(Role::Retriever, prompt))?;
    let mut tops = Vec::new();
    for name in string_array(reply.content()) {
        match taxonomy.category_ci(&name) {
            Some(c) if !tops.iter().any(|t: &&super::Category| t.name == c.name) => tops.push(c),
            Some(_) => {}
            None => warn!(category = %name, "ignoring unknown top-level category"),
        }
    }
    if tops.is_empty() {
        return Ok(Vec::new());
    }

    let labels = tops
        .iter()
        .flat_map(|c| {
            c.subcategories
                .iter()
                .map(move |s| format!("- {}/{s}", c.name))
        })
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = SUB_PROMPT
        .replace("{content}", content.trim())
        .replace("{labels}", &labels);
    let reply = llm.complete(&ChatRequest::prompt(Role::Retriever, prompt))?;
    let mut out = Vec::new();
    for text in string_array(reply.content()) {
        match taxonomy.parse_label(&text) {
            // Only subcategories of the selected top categories count.
            Ok(l) if tops.iter().any(|c| c.name == l.top) && !out.contains(&l) => out.push(l),
            Ok(_) => {}
            Err(_) => warn!(label = %text, "ignoring unknown label"),
        }
    }
    Ok(out)
}

/// Extracts the first JSON array of strings in `text`; empty when absent.
fn string_array(text: &str) -> Vec<String> {
    let (Some(start), Some(end)) = (text.find('['), text.rfind(']')) else {
        return Vec::new();
    };
    if end < start {
        return Vec::new();
    }
    match serde_json::from_str::<Value>(&text[start..=end]) {
        Ok(Value::Array(items)) => items
            .into_iter()
            .filter_map(|v| v.as_str().map(str::to_string))
            .collect(),
        _ => Vec::new(),
    }
}

/// Merges per-round label lists. A label earns one vote per round that
/// lists it; labels are ordered by votes, ties by taxonomy order. A single
/// round is returned as given.
pub fn tally_votes(ballots: &[Vec<LabelPath>], taxonomy: &Taxonomy) -> Vec<LabelPath> {
    if let [only] = ballots {
        let mut out: Vec<LabelPath> = Vec::new();
        for l in only {
            if !out.contains(l) {
                out.push(l.clone());
            }
        }
        return out;
    }
    let mut votes: HashMap<&LabelPath, usize> = HashMap::new();
    for ballot in ballots {
        let mut seen = Vec::new();
        for l in ballot {
            if !seen.contains(&l) {
                seen.push(l);
                *votes.entry(l).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&LabelPath, usize)> = votes.into_iter().collect();
    ranked.sort_by(|(a, va), (b, vb)| {
        vb.cmp(va)
            .then_with(|| {
                let pa = taxonomy.position(a).unwrap_or(usize::MAX);
                let pb = taxonomy.position(b).unwrap_or(usize::MAX);
                pa.cmp(&pb)
            })
            .then_with(|| a.cmp(b))
    });
    ranked.into_iter().map(|(l, _)| l.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::Category;
    use crate::llm::{ChatResponse, FnBackend, RoleModelConfig};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn abc() -> Taxonomy {
        Taxonomy::new(vec![Category {
            name: "T".into(),
            subcategories: vec!["A".into(), "B".into(), "C".into()],
        }])
        .unwrap()
    }

    fn l(s: &str) -> LabelPath {
        LabelPath::new("T", s)
    }

    #[test]
    fn majority_label_comes_first() {
        let ballots: Vec<Vec<LabelPath>> = ["A", "A", "B", "A", "C"]
            .iter()
            .map(|s| vec![l(s)])
            .collect();
        assert_eq!(tally_votes(&ballots, &abc()), vec![l("A"), l("B"), l("C")]);
    }

    #[test]
    fn ties_follow_taxonomy_order() {
        let ballots: Vec<Vec<LabelPath>> = ["B", "B", "A", "A", "C"]
            .iter()
            .map(|s| vec![l(s)])
            .collect();
        assert_eq!(tally_votes(&ballots, &abc()), vec![l("A"), l("B"), l("C")]);
    }

    #[test]
    fn single_round_is_verbatim() {
        let ballots = vec![vec![l("C"), l("A")]];
        assert_eq!(tally_votes(&ballots, &abc()), vec![l("C"), l("A")]);
    }

    #[test]
    fn repeated_label_in_one_round_counts_once() {
        let ballots = vec![vec![l("B"), l("B")], vec![l("A")], vec![l("A")]];
        assert_eq!(tally_votes(&ballots, &abc()), vec![l("A"), l("B")]);
    }

    fn scripted(replies: Vec<&'static str>) -> (Gateway, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = calls.clone();
        let backend = FnBackend(move |_req: &ChatRequest| {
            let i = counter.fetch_add(1, Ordering::SeqCst);
            Ok(ChatResponse::text(replies[i % replies.len()]))
        });
        (Gateway::new(RoleModelConfig::default(), backend), calls)
    }

    #[test]
    fn two_calls_per_round_and_vote() {
        let (gw, calls) = scripted(vec![
            "[\"Computer Vision\"]",
            "Sure: [\"Computer Vision/Image Classification\", \"Computer Vision/Object Detection\"]",
        ]);
        let t = Taxonomy::builtin();
        let labels = label_task("classify dog photos", &t, &gw, 5).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 10);
        assert_eq!(
            labels[0],
            LabelPath::new("Computer Vision", "Image Classification")
        );
        assert_eq!(labels.len(), 2);
    }

    #[test]
    fn subcategories_outside_chosen_tops_are_ignored() {
        let (gw, _) = scripted(vec![
            "[\"Time Series\", \"Nonsense\"]",
            "[\"Computer Vision/Image Classification\", \"Time Series/Forecasting\", \"garbage\"]",
        ]);
        let labels = label_task("sales", &Taxonomy::builtin(), &gw, 1).unwrap();
        assert_eq!(labels, vec![LabelPath::new("Time Series", "Forecasting")]);
    }

    #[test]
    fn unusable_replies_mean_no_labels() {
        let (gw, _) = scripted(vec!["I cannot help"]);
        assert!(matches!(
            label_task("x", &Taxonomy::builtin(), &gw, 2),
            Err(KnowledgeError::NoLabels { rounds: 2 })
        ));
        assert!(matches!(
            label_task("x", &Taxonomy::builtin(), &gw, 0),
            Err(KnowledgeError::Precondition(_))
        ));
    }
}
