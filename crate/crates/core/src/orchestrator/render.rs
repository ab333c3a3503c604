use std::fmt::Write as _;

use crate::tree::{NodeId, NodeStatus, SolutionNode, SolutionTree};

use super::journal::{replay_tree, JournalError, JournalRecord};

fn label(n: &SolutionNode) -> String {
    let mut s = format!("{} [{}", n.id, n.action_kind);
    if n.with_tricks {
        s.push_str("+tricks");
    }
    s.push_str("] ");
    s.push_str(&n.status.to_string());
    if let Some(m) = n.metric {
        let _ = write!(s, " metric={}", m.value());
    }
    s
}

fn direction(tree: &SolutionTree) -> &'static str {
    match tree.canonical_direction() {
        Some(true) => "lower is better",
        Some(false) => "higher is better",
        None => "no valid node",
    }
}

/// Indented text view of the forest in creation order.
pub fn render_tree(records: &[JournalRecord]) -> Result<String, JournalError> {
    let tree = replay_tree(records)?;
    let best = tree.best_node()?;
    let valid = tree.valid_nodes().len();
    let mut out = format!(
        "{} node(s), {} valid, {}\n",
        tree.len(),
        valid,
        direction(&tree)
    );
    match &best {
        Some(id) => {
            let n = tree.get(id).expect("best node exists");
            let _ = writeln!(out, "best: {}", label(n));
        }
        None => out.push_str("best: none\n"),
    }
    for root in tree.roots() {
        walk(&tree, root, "", "", best.as_ref(), &mut out);
    }
    Ok(out)
}

fn walk(
    tree: &SolutionTree,
    node: &SolutionNode,
    lead: &str,
    child_lead: &str,
    best: Option<&NodeId>,
    out: &mut String,
) {
    let marker = if best == Some(&node.id) {
        "  <- best"
    } else {
        ""
    };
    let _ = writeln!(out, "{lead}{}{marker}", label(node));
    let children = tree.children(&node.id);
    for (i, c) in children.iter().enumerate() {
        let child = tree.get(c).expect("children are in the tree");
        let last = i + 1 == children.len();
        let (branch, cont) = if last {
            ("`-- ", "    ")
        } else {
            ("|-- ", "|   ")
        };
        walk(
            tree,
            child,
            &format!("{child_lead}{branch}"),
            &format!("{child_lead}{cont}"),
            best,
            out,
        );
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz description of the forest. Valid nodes are green, buggy ones
/// red, and the best node has a heavy border.
pub fn render_dot(records: &[JournalRecord]) -> Result<String, JournalError> {
    let tree = replay_tree(records)?;
    let best = tree.best_node()?;
    let mut out = String::from(
        "digraph solution_tree {\n    rankdir=TB;\n    node [shape=box, style=filled];\n",
    );
    for n in tree.nodes() {
        let mut text = format!("{}\\n{}", n.id, n.action_kind);
        if n.with_tricks {
            text.push_str(" +tricks");
        }
        match n.metric {
            Some(m) => {
                let _ = write!(text, "\\n{} {}", n.status, m.value());
            }
            None => {
                let _ = write!(text, "\\n{}", n.status);
            }
        }
        let color = match n.status {
            NodeStatus::Valid => "#c8e6c9",
            NodeStatus::Buggy => "#ffcdd2",
        };
        let border = if best.as_ref() == Some(&n.id) {
            ", penwidth=3"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "    \"{}\" [label=\"{}\", fillcolor=\"{color}\"{border}];",
            dot_escape(n.id.as_str()),
            dot_escape(&text).replace("\\\\n", "\\n")
        );
    }
    for n in tree.nodes() {
        if let Some(p) = &n.parent_id {
            let _ = writeln!(
                out,
                "    \"{}\" -> \"{}\" [label=\"{}\"];",
                dot_escape(p.as_str()),
                dot_escape(n.id.as_str()),
                n.action_kind
            );
        }
    }
    out.push_str("}\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::testing::{node, valid};
    use crate::tree::ActionKind;

    fn records() -> Vec<JournalRecord> {
        let mut d = node(1, ActionKind::Debug, Some(0));
        d.debug_depth = 1;
        let mut imp = valid(node(3, ActionKind::Improve, Some(2)), 0.9, false);
        imp.with_tricks = true;
        [
            node(0, ActionKind::Draft, None),
            valid(d, 0.7, false),
            valid(node(2, ActionKind::Draft, None), 0.8, false),
            imp,
        ]
        .iter()
        .map(|n| JournalRecord::new(n, None))
        .collect()
    }

    #[test]
    fn text_rendering() {
        let text = render_tree(&records()).unwrap();
        let expected = "\
4 node(s), 3 valid, higher is better
best: node-0003 [improve+tricks] valid metric=0.9
node-0000 [draft] buggy
`-- node-0001 [debug] valid metric=0.7
node-0002 [draft] valid metric=0.8
`-- node-0003 [improve+tricks] valid metric=0.9  <- best
";
        assert_eq!(text, expected);
    }

    #[test]
    fn dot_has_every_node_and_edge() {
        let dot = render_dot(&records()).unwrap();
        assert!(dot.starts_with("digraph solution_tree {"));
        assert_eq!(dot.matches("fillcolor").count(), 4);
        assert_eq!(dot.matches(" -> ").count(), 2);
        assert!(dot.contains("\"node-0002\" -> \"node-0003\" [label=\"improve\"];"));
        assert!(dot.contains("penwidth=3"));
        assert!(dot.contains("label=\"node-0000\\ndraft\\nbuggy\""));
    }

    #[test]
    fn empty_journal_renders() {
        assert_eq!(
            render_tree(&[]).unwrap(),
            "0 node(s), 0 valid, no valid node\nbest: none\n"
        );
    }
}
