//! Parsing helpers for model responses.

/// Contents of the first `<tag>...</tag>` pair, trimmed.
pub fn tag_content<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)? + open.len();
    let end = text[start..].find(&close)? + start;
    Some(text[start..end].trim())
}

/// Bodies of all triple-backtick fenced blocks, in order. The info string
/// after the opening fence is ignored. An unterminated block is not counted.
pub fn fenced_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        let is_fence = line.trim_start().starts_with("```");
        match current.as_mut() {
            None if is_fence => current = Some(Vec::new()),
            None => {}
            Some(lines) if is_fence && line.trim() == "```" => {
                blocks.push(lines.join("\n"));
                current = None;
            }
            Some(lines) => lines.push(line),
        }
    }
    blocks
}

/// First sentence of `text` with code blocks removed, whitespace collapsed,
/// and at most `max_chars` characters.
pub fn first_sentence(text: &str, max_chars: usize) -> String {
    let mut prose = String::new();
    let mut in_code = false;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            in_code = !in_code;
            continue;
        }
        if !in_code {
            prose.push_str(line);
            prose.push(' ');
        }
    }
    let collapsed = prose.split_whitespace().collect::<Vec<_>>().join(" ");
    let end = collapsed
        .char_indices()
        .find(|&(i, c)| {
            matches!(c, '.' | '!' | '?')
                && collapsed[i + c.len_utf8()..]
                    .chars()
                    .next()
                    .is_none_or(char::is_whitespace)
        })
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(collapsed.len());
    let sentence = &collapsed[..end];
    if sentence.chars().count() <= max_chars {
        sentence.to_string()
    } else {
        let cut: String = sentence.chars().take(max_chars.saturating_sub(3)).collect();
        format!("{cut}...")
    }
}

/// Removes commas that directly precede `}` or `]` outside string literals,
/// so the trailing-comma JSON style models often copy still parses.
pub fn strip_trailing_commas(json: &str) -> String {
    let chars: Vec<char> = json.chars().collect();
    let mut out = String::with_capacity(json.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            out.push(c);
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|ch| !ch.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_are_extracted() {
        let r = "<think>x</think>\n<plan>\n y \n</plan>";
        assert_eq!(tag_content(r, "think"), Some("x"));
        assert_eq!(tag_content(r, "plan"), Some("y"));
        assert_eq!(tag_content(r, "score"), None);
        assert_eq!(tag_content("<plan>unclosed", "plan"), None);
    }

    #[test]
    fn fenced_blocks_are_counted() {
        assert_eq!(fenced_blocks("```python\na = 1\n```"), vec!["a = 1"]);
        assert_eq!(fenced_blocks("```\na\n```\ntext\n```py\nb\n```").len(), 2);
        assert!(fenced_blocks("no code").is_empty());
        assert!(fenced_blocks("```\nnever closed").is_empty());
    }

    #[test]
    fn first_sentence_skips_code() {
        let plan = "Use LightGBM with 5 folds. Then blend.\n```python\nx=1\n```";
        assert_eq!(first_sentence(plan, 200), "Use LightGBM with 5 folds.");
        assert_eq!(first_sentence("v1.2 model works", 200), "v1.2 model works");
        assert_eq!(first_sentence("abcdefghij", 6), "abc...");
    }

    #[test]
    fn trailing_commas_outside_strings_are_removed() {
        let s = r#"{"a": [1, 2,], "b": "x,]", }"#;
        let v: serde_json::Value = serde_json::from_str(&strip_trailing_commas(s)).unwrap();
        assert_eq!(v["b"], "x,]");
        assert_eq!(v["a"].as_array().unwrap().len(), 2);
    }
}
