use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    Message, ModeDecision, PolicyBackend, PolicyReply, PolicyRequest, PromptKind, TokenLogprob,
};
use crate::error::{BackendError, DoraError, Result};

/// One scripted reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// Request kind this entry answers. `None` matches anything (sequential order only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<PromptKind>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<TokenLogprob>>,
}

impl ScriptEntry {
    pub fn raw(kind: PromptKind, text: impl Into<String>) -> Self {
        Self {
            kind: Some(kind),
            text: text.into(),
            token_logprobs: None,
        }
    }

    pub fn mode(mode: ModeDecision) -> Self {
        let text = match mode {
            ModeDecision::Greedy => r#"{"mode":"GREEDY"}"#,
            ModeDecision::Explore => r#"{"mode":"EXPLORE"}"#,
        };
        Self::raw(PromptKind::ModeDecision, text)
    }

    pub fn lambda(value: f64) -> Self {
        Self::raw(
            PromptKind::LambdaDecision,
            format!(r#"{{"lambda":{value}}}"#),
        )
    }

    /// A greedy reply whose tokens carry `logprobs` (one per token).
    pub fn greedy(action: &str, logprobs: &[f64]) -> Self {
        Self {
            kind: Some(PromptKind::GreedyAction),
            text: action.to_string(),
            token_logprobs: Some(tokenize_line(action, logprobs)),
        }
    }

    /// A candidate list, one action per line, each with its own token log-probabilities.
    ///
    /// Panics if a line has more log-probabilities than non-whitespace characters.
    pub fn candidates(lines: &[(&str, &[f64])]) -> Self {
        let mut tokens = Vec::new();
        for (i, (line, lps)) in lines.iter().enumerate() {
            if i > 0 {
                tokens.push(TokenLogprob {
                    token: "\n".into(),
                    logprob: -0.01,
                });
            }
            tokens.extend(tokenize_line(line, lps));
        }
        Self {
            kind: Some(PromptKind::CandidateList),
            text: lines.iter().map(|(l, _)| *l).collect::<Vec<_>>().join("\n"),
            token_logprobs: Some(tokens),
        }
    }

    /// A candidate list with no log-probabilities attached.
    pub fn candidate_text(lines: &[&str]) -> Self {
        Self::raw(PromptKind::CandidateList, lines.join("\n"))
    }

    fn reply(&self) -> PolicyReply {
        let token_count = match &self.token_logprobs {
            Some(t) => t.len() as u64,
            None => self.text.split_whitespace().count() as u64,
        };
        PolicyReply {
            text: self.text.clone(),
            token_logprobs: self.token_logprobs.clone(),
            token_count,
        }
    }
}

/// Cuts `line` into `logprobs.len()` tokens, each starting at a non-whitespace character.
fn tokenize_line(line: &str, logprobs: &[f64]) -> Vec<TokenLogprob> {
    if logprobs.is_empty() {
        return vec![TokenLogprob {
            token: line.to_string(),
            logprob: 0.0,
        }];
    }
    let starts: Vec<usize> = line
        .char_indices()
        .filter(|(_, c)| !c.is_whitespace())
        .map(|(i, _)| i)
        .collect();
    assert!(
        starts.len() >= logprobs.len(),
        "line {line:?} too short for {} tokens",
        logprobs.len()
    );
    let mut bounds: Vec<usize> = starts[..logprobs.len()].to_vec();
    bounds[0] = 0;
    bounds.push(line.len());
    logprobs
        .iter()
        .enumerate()
        .map(|(i, lp)| TokenLogprob {
            token: line[bounds[i]..bounds[i + 1]].to_string(),
            logprob: *lp,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayOrder {
    /// Entries are consumed strictly in order; a kind mismatch is an error.
    #[default]
    Sequential,
    /// Each request kind has its own queue of entries.
    PerKind,
}

/// A replayable script, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockScript {
    pub entries: Vec<ScriptEntry>,
    #[serde(default)]
    pub order: ReplayOrder,
    /// Wrap around instead of erroring when a queue runs out.
    #[serde(default)]
    pub cycle: bool,
    /// Teacher-forced log-probabilities keyed by normalized action text.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rescore: BTreeMap<String, Vec<f64>>,
}

impl MockScript {
    pub fn sequential(entries: Vec<ScriptEntry>) -> Self {
        Self {
            entries,
            ..Self::default()
        }
    }

    pub fn per_kind(entries: Vec<ScriptEntry>, cycle: bool) -> Self {
        Self {
            entries,
            order: ReplayOrder::PerKind,
            cycle,
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DoraError::Config(format!("mock script {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| DoraError::Config(format!("mock script {}: {e}", path.display())))
    }
}

#[derive(Debug, Default)]
struct ReplayState {
    cursor: usize,
    kind_cursors: HashMap<PromptKind, usize>,
    consumed: usize,
    calls: Vec<PromptKind>,
    rescore_calls: usize,
}

/// Deterministic backend that replays a script. One episode per instance.
#[derive(Debug)]
pub struct MockPolicy {
    script: MockScript,
    queues: HashMap<PromptKind, Vec<usize>>,
    state: Mutex<ReplayState>,
}

impl MockPolicy {
    pub fn new(script: MockScript) -> Result<Self> {
        let mut queues: HashMap<PromptKind, Vec<usize>> = HashMap::new();
        if script.order == ReplayOrder::PerKind {
            for (i, e) in script.entries.iter().enumerate() {
                let kind = e.kind.ok_or_else(|| {
                    DoraError::Config(format!("per-kind mock entry {i} has no kind"))
                })?;
                queues.entry(kind).or_default().push(i);
            }
        }
        Ok(Self {
            script,
            queues,
            state: Mutex::new(ReplayState::default()),
        })
    }

    pub fn sequential(entries: Vec<ScriptEntry>) -> Self {
        Self::new(MockScript::sequential(entries)).expect("sequential scripts always build")
    }

    /// Kinds of every `complete` call so far, in order.
    pub fn calls(&self) -> Vec<PromptKind> {
        self.state.lock().expect("mock state").calls.clone()
    }

    pub fn rescore_calls(&self) -> usize {
        self.state.lock().expect("mock state").rescore_calls
    }

    /// Entries consumed so far.
    pub fn consumed(&self) -> usize {
        self.state.lock().expect("mock state").consumed
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }
}

impl PolicyBackend for MockPolicy {
    fn complete(&self, request: &PolicyRequest) -> Result<PolicyReply, BackendError> {
        let mut state = self.state.lock().expect("mock state");
        state.calls.push(request.prompt_kind);
        let consumed = state.consumed;
        let entry = match self.script.order {
            ReplayOrder::Sequential => {
                let n = self.script.entries.len();
                if n == 0 || (state.cursor >= n && !self.script.cycle) {
                    return Err(BackendError::ScriptExhausted { consumed });
                }
                let index = state.cursor % n;
                let entry = &self.script.entries[index];
                if let Some(kind) = entry.kind {
                    if kind != request.prompt_kind {
                        return Err(BackendError::ScriptMismatch {
                            index,
                            expected: kind.to_string(),
                            got: request.prompt_kind.to_string(),
                        });
                    }
                }
                state.cursor += 1;
                entry
            }
            ReplayOrder::PerKind => {
                let queue = self
                    .queues
                    .get(&request.prompt_kind)
                    .map(Vec::as_slice)
                    .unwrap_or(&[]);
                let pos = state.kind_cursors.entry(request.prompt_kind).or_default();
                if queue.is_empty() || (*pos >= queue.len() && !self.script.cycle) {
                    return Err(BackendError::ScriptExhausted { consumed });
                }
                let index = queue[*pos % queue.len()];
                *pos += 1;
                &self.script.entries[index]
            }
        };
        state.consumed += 1;
        Ok(entry.reply())
    }

    fn supports_rescoring(&self) -> bool {
        !self.script.rescore.is_empty()
    }

    fn rescore(
        &self,
        _context: &[Message],
        continuation: &str,
    ) -> Result<Option<Vec<f64>>, BackendError> {
        self.state.lock().expect("mock state").rescore_calls += 1;
        Ok(self.script.rescore.get(continuation).cloned())
    }
}
