use std::fs;
use std::path::{Path, PathBuf};

use crate::action::TaskSpec;

use super::RunError;

/// A task directory: `description.md`, a `data/` directory, and an optional
/// one-line `metric.txt` naming the evaluation metric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDir {
    pub spec: TaskSpec,
    pub data_dir: PathBuf,
}

pub fn load_task(dir: &Path) -> Result<TaskDir, RunError> {
    let missing = |what: &str| RunError::Task(format!("{}: missing {what}", dir.display()));
    let description =
        fs::read_to_string(dir.join("description.md")).map_err(|_| missing("description.md"))?;
    let data_dir = dir.join("data");
    if !data_dir.is_dir() {
        return Err(missing("data/ directory"));
    }
    let metric_hint = fs::read_to_string(dir.join("metric.txt"))
        .ok()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    let task_id = dir
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .ok_or_else(|| RunError::Task(format!("{}: cannot derive task id", dir.display())))?;
    Ok(TaskDir {
        spec: TaskSpec {
            task_id,
            description: description.trim().to_string(),
            metric_hint,
        },
        data_dir,
    })
}
