use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use walkdir::WalkDir;

use crate::llm::{ChatRequest, Gateway, LlmError, Role};
use crate::sandbox::Workspace;

use super::ActionError;

const MAX_LISTED_FILES: usize = 200;
const SNIFF_BYTES: usize = 8 * 1024;
/// Text files up to this size get their first lines inlined.
const PREVIEW_LIMIT: u64 = 64 * 1024 * 1024;
/// Tabular files up to this size get a full row count.
const COUNT_LIMIT: u64 = 512 * 1024 * 1024;
const PREVIEW_LINES: usize = 5;
const PREVIEW_LINE_CHARS: usize = 200;

const REFINE_PROMPT: &str = "You are an expert data scientist. Below is a task description and an automatically generated profile of the task's input files in ./input.

# Task description

{task_description}

# File profile

{profile}

Write a concise data analysis for the engineer who will solve this task: which files hold training data, test data and the submission template, the target column, the feature types, the row counts, and anything unusual. Do not propose a solution.";

/// Deterministic profile of `./input`: every file with its size, the first
/// lines of text files, and row and column counts of tabular files. Binary
/// contents are never inlined.
pub fn analyze_data(workspace: &Workspace) -> Result<String, ActionError> {
    let input = workspace.input_dir();
    if !input.is_dir() {
        return Err(ActionError::WorkspaceMissing(input.display().to_string()));
    }
    let mut files = Vec::new();
    for entry in WalkDir::new(&input).sort_by_file_name() {
        let entry = entry.map_err(|e| ActionError::WorkspaceMissing(e.to_string()))?;
        if entry.file_type().is_file() {
            files.push(entry.into_path());
        }
    }
    if files.is_empty() {
        return Ok("The ./input directory contains no files.".to_string());
    }

    let total: u64 = files
        .iter()
        .filter_map(|f| fs::metadata(f).ok())
        .map(|m| m.len())
        .sum();
    let mut out = format!(
        "The ./input directory contains {} file(s), {} in total.\n",
        files.len(),
        human_size(total)
    );
    for path in files.iter().take(MAX_LISTED_FILES) {
        let rel = path.strip_prefix(&input).unwrap_or(path);
        let size = fs::metadata(path).map(|m| m.len()).unwrap_or(0);
        let _ = writeln!(out, "\n- {} ({})", rel.display(), human_size(size));
        describe_file(path, size, &mut out);
    }
    if files.len() > MAX_LISTED_FILES {
        let _ = writeln!(
            out,
            "\n... and {} more file(s).",
            files.len() - MAX_LISTED_FILES
        );
    }
    Ok(out.trim_end().to_string())
}

fn describe_file(path: &Path, size: u64, out: &mut String) {
    let Some(head) = sniff(path) else {
        out.push_str("  binary file, contents not shown\n");
        return;
    };
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    if matches!(ext.as_str(), "csv" | "tsv") {
        let delimiter = if ext == "tsv" { b'\t' } else { b',' };
        describe_table(path, size, delimiter, out);
    }
    if size <= PREVIEW_LIMIT {
        let lines: Vec<String> = head
            .lines()
            .take(PREVIEW_LINES)
            .map(|l| {
                if l.chars().count() > PREVIEW_LINE_CHARS {
                    let cut: String = l.chars().take(PREVIEW_LINE_CHARS).collect();
                    format!("{cut}...")
                } else {
                    l.to_string()
                }
            })
            .collect();
        if !lines.is_empty() {
            out.push_str("  first lines:\n");
            for l in lines {
                let _ = writeln!(out, "    {l}");
            }
        }
    }
}

fn describe_table(path: &Path, size: u64, delimiter: u8, out: &mut String) {
    let reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .has_headers(true)
        .from_path(path);
    let Ok(mut reader) = reader else { return };
    let headers: Vec<String> = match reader.headers() {
        Ok(h) => h.iter().map(str::to_string).collect(),
        Err(_) => return,
    };
    let _ = writeln!(out, "  columns ({}): {}", headers.len(), headers.join(", "));
    if size > COUNT_LIMIT {
        out.push_str("  row count skipped (file too large)\n");
        return;
    }
    let data_rows = reader.records().filter(Result::is_ok).count();
    let _ = writeln!(
        out,
        "  rows: {} lines ({} data rows after the header)",
        data_rows + 1,
        data_rows
    );
}

/// First bytes as text, or `None` for binary content.
fn sniff(path: &Path) -> Option<String> {
    let mut buf = vec![0u8; SNIFF_BYTES];
    let n = fs::File::open(path)
        .and_then(|mut f| f.read(&mut buf))
        .ok()?;
    buf.truncate(n);
    if buf.contains(&0) {
        return None;
    }
    match std::str::from_utf8(&buf) {
        Ok(s) => Some(s.to_string()),
        // A multi-byte character cut at the sniff boundary is still text.
        Err(e) if e.error_len().is_none() => {
            Some(String::from_utf8_lossy(&buf[..e.valid_up_to()]).into_owned())
        }
        Err(_) => None,
    }
}

fn human_size(bytes: u64) -> String {
    const UNITS: [&str; 4] = ["KB", "MB", "GB", "TB"];
    if bytes < 1024 {
        return format!("{bytes} B");
    }
    let mut value = bytes as f64;
    let mut unit = "B";
    for u in UNITS {
        if value < 1024.0 {
            break;
        }
        value /= 1024.0;
        unit = u;
    }
    format!("{value:.1} {unit}")
}

/// Asks the analyzer model to turn the static profile into prose.
pub fn refine_analysis(
    profile: &str,
    task_description: &str,
    llm: &Gateway,
) -> Result<String, LlmError> {
    let prompt = REFINE_PROMPT
        .replace("{task_description}", task_description)
        .replace("{profile}", profile);
    let reply = llm.complete(&ChatRequest::prompt(Role::Analyzer, prompt))?;
    let text = reply.content().trim();
    Ok(if text.is_empty() {
        profile.to_string()
    } else {
        format!("{profile}\n\n{text}")
    })
}
