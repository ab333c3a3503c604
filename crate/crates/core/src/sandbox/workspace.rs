use std::fs;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use super::SandboxError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

/// What a solution left behind in `./submission`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub has_submission: bool,
    pub eval_metric_text: Option<String>,
}

impl Workspace {
    /// Wraps an already prepared workspace root.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, SandboxError> {
        let ws = Self { root: root.into() };
        for dir in [ws.input_dir(), ws.submission_dir(), ws.working_dir()] {
            if !dir.is_dir() {
                return Err(SandboxError::io(
                    &dir,
                    std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        "missing workspace directory",
                    ),
                ));
            }
        }
        Ok(ws)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn input_dir(&self) -> PathBuf {
        self.root.join("input")
    }

    pub fn submission_dir(&self) -> PathBuf {
        self.root.join("submission")
    }

    pub fn working_dir(&self) -> PathBuf {
        self.root.join("working")
    }

    pub fn submission_file(&self) -> PathBuf {
        self.submission_dir().join("submission.csv")
    }

    pub fn eval_metric_file(&self) -> PathBuf {
        self.submission_dir().join("eval_metric.txt")
    }

    /// Empties `./submission` so each action starts from a clean slate.
    pub fn reset_submission(&self) -> Result<(), SandboxError> {
        let dir = self.submission_dir();
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| SandboxError::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| SandboxError::io(&dir, e))
    }
}

/// Builds `<run_root>/{input,submission,working}`, copying `task_data` into
/// `input` and marking the copy read-only.
pub fn prepare_workspace(task_data: &Path, run_root: &Path) -> Result<Workspace, SandboxError> {
    if !task_data.is_dir() {
        return Err(SandboxError::io(
            task_data,
            std::io::Error::new(std::io::ErrorKind::NotFound, "task data directory missing"),
        ));
    }
    let ws = Workspace {
        root: run_root.to_path_buf(),
    };
    let input = ws.input_dir();
    if input.exists() {
        set_tree_writable(&input)?;
        fs::remove_dir_all(&input).map_err(|e| SandboxError::io(&input, e))?;
    }
    copy_tree(task_data, &input)?;
    set_tree_read_only(&input)?;
    ws.reset_submission()?;
    let working = ws.working_dir();
    fs::create_dir_all(&working).map_err(|e| SandboxError::io(&working, e))?;
    Ok(ws)
}

pub fn collect_artifacts(ws: &Workspace) -> Artifacts {
    let eval_metric_text = fs::read_to_string(ws.eval_metric_file())
        .ok()
        .map(|s| s.trim().to_string());
    Artifacts {
        has_submission: ws.submission_file().is_file(),
        eval_metric_text,
    }
}

fn copy_tree(from: &Path, to: &Path) -> Result<(), SandboxError> {
    for entry in WalkDir::new(from).follow_links(true) {
        let entry = entry.map_err(|e| {
            let path = e
                .path()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| from.to_path_buf());
            SandboxError::io(path, e.into())
        })?;
        let rel = entry
            .path()
            .strip_prefix(from)
            .expect("walkdir yields paths under its root");
        let target = to.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target).map_err(|e| SandboxError::io(&target, e))?;
        } else {
            fs::copy(entry.path(), &target).map_err(|e| SandboxError::io(&target, e))?;
        }
    }
    Ok(())
}

fn set_tree_read_only(root: &Path) -> Result<(), SandboxError> {
    // Children first so directories are still writable while we walk them.
    for entry in WalkDir::new(root).contents_first(true) {
        let entry = entry.map_err(|e| SandboxError::io(root, e.into()))?;
        set_mode(entry.path(), entry.file_type().is_dir(), false)?;
    }
    Ok(())
}

fn set_tree_writable(root: &Path) -> Result<(), SandboxError> {
    for entry in WalkDir::new(root) {
        let entry = entry.map_err(|e| SandboxError::io(root, e.into()))?;
        set_mode(entry.path(), entry.file_type().is_dir(), true)?;
    }
    Ok(())
}

#[cfg(unix)]
fn set_mode(path: &Path, is_dir: bool, writable: bool) -> Result<(), SandboxError> {
    use std::os::unix::fs::PermissionsExt;
    let mode = match (is_dir, writable) {
        (true, true) => 0o755,
        (true, false) => 0o555,
        (false, true) => 0o644,
        (false, false) => 0o444,
    };
    fs::set_permissions(path, fs::Permissions::from_mode(mode))
        .map_err(|e| SandboxError::io(path, e))
}

#[cfg(not(unix))]
fn set_mode(path: &Path, _is_dir: bool, writable: bool) -> Result<(), SandboxError> {
    let mut perms = fs::metadata(path)
        .map_err(|e| SandboxError::io(path, e))?
        .permissions();
    perms.set_readonly(!writable);
    fs::set_permissions(path, perms).map_err(|e| SandboxError::io(path, e))
}
