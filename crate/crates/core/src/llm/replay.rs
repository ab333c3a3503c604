use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError, Role};

/// One recorded request/response pair; a transcript line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub role: Role,
    pub request_digest: String,
    pub request: ChatRequest,
    pub response: ChatResponse,
}

impl Exchange {
    pub fn new(request: ChatRequest, response: ChatResponse) -> Self {
        Self {
            role: request.role,
            request_digest: request.digest(),
            request,
            response,
        }
    }
}

pub fn read_transcript(path: &Path) -> Result<Vec<Exchange>, LlmError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| LlmError::BadTranscript {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Serves recorded responses keyed by (role, request digest). Repeated
/// identical requests consume the recorded responses in order.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    queues: Mutex<HashMap<(Role, String), VecDeque<ChatResponse>>>,
}

impl ReplayBackend {
    pub fn new(exchanges: impl IntoIterator<Item = Exchange>) -> Self {
        let mut queues: HashMap<(Role, String), VecDeque<ChatResponse>> = HashMap::new();
        for ex in exchanges {
            queues
                .entry((ex.role, ex.request_digest))
                .or_default()
                .push_back(ex.response);
        }
        Self {
            queues: Mutex::new(queues),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(read_transcript(path)?))
    }

    pub fn remaining(&self) -> usize {
        let queues = self.queues.lock().unwrap_or_else(|p| p.into_inner());
        queues.values().map(VecDeque::len).sum()
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, _model: &str, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let digest = request.digest();
        let mut queues = self.queues.lock().unwrap_or_else(|p| p.into_inner());
        queues
            .get_mut(&(request.role, digest.clone()))
            .and_then(VecDeque::pop_front)
            .ok_or(LlmError::ReplayMiss {
                role: request.role,
                digest,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_transcript_misses() {
        let backend = ReplayBackend::new([]);
        let err = backend
            .complete("m", &ChatRequest::prompt(Role::Coder, "x"))
            .unwrap_err();
        assert!(matches!(
            err,
            LlmError::ReplayMiss {
                role: Role::Coder,
                ..
            }
        ));
    }

    #[test]
    fn altered_prompt_misses() {
        let req = ChatRequest::prompt(Role::Planner, "plan this");
        let backend = ReplayBackend::new([Exchange::new(req.clone(), ChatResponse::text("p"))]);
        assert!(backend
            .complete("m", &ChatRequest::prompt(Role::Planner, "plan that"))
            .is_err());
        assert_eq!(backend.complete("m", &req).unwrap().content(), "p");
        assert_eq!(backend.remaining(), 0);
    }

    #[test]
    fn same_request_under_other_role_misses() {
        let req = ChatRequest::prompt(Role::Planner, "x");
        let backend = ReplayBackend::new([Exchange::new(req, ChatResponse::text("p"))]);
        assert!(backend
            .complete("m", &ChatRequest::prompt(Role::Improver, "x"))
            .is_err());
    }

    #[test]
    fn malformed_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        fs::write(&path, "{not json}\n").unwrap();
        assert!(matches!(
            read_transcript(&path),
            Err(LlmError::BadTranscript { line: 1, .. })
        ));
    }
}
