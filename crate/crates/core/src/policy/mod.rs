//! The action-proposing policy: a transport-agnostic backend trait plus the
//! four calls the agent makes through it (mode decision, candidate list,
//! greedy action, λ decision).

mod mock;
mod remote;

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::BackendError;
use crate::prompts::{render, Prompts};
use crate::scoring::CandidateAction;

pub use mock::{MockPolicy, MockScript, ReplayOrder, ScriptEntry};
pub use remote::{RemoteBackend, RemoteConfig, ENV_API_BASE, ENV_API_KEY, ENV_MODEL};

pub const DEFAULT_TAU_DECISION: f64 = 0.2;
pub const DEFAULT_TAU_CANDIDATES: f64 = 0.7;
pub const DEFAULT_TAU_LAMBDA: f64 = 0.2;
pub const DEFAULT_N_CANDIDATES: usize = 20;

/// Floor applied to `-inf` token log-probabilities before scoring.
pub const LOGPROB_FLOOR: f64 = -100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    ModeDecision,
    CandidateList,
    GreedyAction,
    LambdaDecision,
    MabAnswer,
}

impl std::fmt::Display for PromptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PromptKind::ModeDecision => "mode_decision",
            PromptKind::CandidateList => "candidate_list",
            PromptKind::GreedyAction => "greedy_action",
            PromptKind::LambdaDecision => "lambda_decision",
            PromptKind::MabAnswer => "mab_answer",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRequest {
    pub context: Vec<Message>,
    pub temperature: f64,
    pub max_candidates: usize,
    pub prompt_kind: PromptKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PolicyReply {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub token_count: u64,
}

/// Anything that can answer a policy request. Implementations must tolerate
/// concurrent calls from independent episodes.
pub trait PolicyBackend: Send + Sync {
    fn complete(&self, request: &PolicyRequest) -> Result<PolicyReply, BackendError>;

    /// Whether [`PolicyBackend::rescore`] can return teacher-forced log-probabilities.
    fn supports_rescoring(&self) -> bool {
        false
    }

    /// Per-token log-probabilities of `continuation` forced after `context`.
    /// `Ok(None)` means the transport cannot provide them.
    fn rescore(
        &self,
        _context: &[Message],
        _continuation: &str,
    ) -> Result<Option<Vec<f64>>, BackendError> {
        Ok(None)
    }
}

impl<B: PolicyBackend + ?Sized> PolicyBackend for &B {
    fn complete(&self, request: &PolicyRequest) -> Result<PolicyReply, BackendError> {
        (**self).complete(request)
    }
    fn supports_rescoring(&self) -> bool {
        (**self).supports_rescoring()
    }
    fn rescore(
        &self,
        context: &[Message],
        continuation: &str,
    ) -> Result<Option<Vec<f64>>, BackendError> {
        (**self).rescore(context, continuation)
    }
}

impl<B: PolicyBackend + ?Sized> PolicyBackend for std::sync::Arc<B> {
    fn complete(&self, request: &PolicyRequest) -> Result<PolicyReply, BackendError> {
        (**self).complete(request)
    }
    fn supports_rescoring(&self) -> bool {
        (**self).supports_rescoring()
    }
    fn rescore(
        &self,
        context: &[Message],
        continuation: &str,
    ) -> Result<Option<Vec<f64>>, BackendError> {
        (**self).rescore(context, continuation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModeDecision {
    Greedy,
    Explore,
}

/// How candidate log-probabilities are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogprobAcquisition {
    /// Teacher-forced rescoring of each candidate, falling back to slicing.
    #[default]
    Rescore,
    /// Slice the list reply's token log-probabilities line by line.
    Slice,
}

/// Where a candidate's log-probabilities actually came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogprobSource {
    Rescored,
    Sliced,
    /// No log-probabilities were available; a single `0.0` stands in.
    Missing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeOutcome {
    pub mode: ModeDecision,
    pub parsed: bool,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateBatch {
    pub candidates: Vec<CandidateAction>,
    pub sources: Vec<LogprobSource>,
    pub tokens: u64,
    pub rescore_calls: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaOutcome {
    pub lambda: f64,
    pub parsed: bool,
    pub attempts: u32,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOutcome {
    pub action: CandidateAction,
    pub tokens: u64,
}

fn with_instruction(context: &[Message], instruction: Option<String>) -> Vec<Message> {
    let mut msgs = context.to_vec();
    if let Some(text) = instruction {
        msgs.push(Message::user(text));
    }
    msgs
}

/// Asks the policy whether to explore. Anything but an exact `EXPLORE` is greedy.
pub fn decide_mode<B: PolicyBackend + ?Sized>(
    backend: &B,
    prompts: &Prompts,
    context: &[Message],
    temperature: f64,
) -> Result<ModeOutcome, BackendError> {
    let request = PolicyRequest {
        context: with_instruction(context, Some(prompts.mode_decision.clone())),
        temperature,
        max_candidates: 1,
        prompt_kind: PromptKind::ModeDecision,
    };
    let reply = backend.complete(&request)?;
    let (mode, parsed) = parse_mode_reply(&reply.text);
    Ok(ModeOutcome {
        mode,
        parsed,
        tokens: reply.token_count,
    })
}

pub fn parse_mode_reply(raw: &str) -> (ModeDecision, bool) {
    let Some(value) = parse_json_object(raw) else {
        return (ModeDecision::Greedy, false);
    };
    match value.get("mode").and_then(Value::as_str) {
        Some("EXPLORE") => (ModeDecision::Explore, true),
        Some("GREEDY") => (ModeDecision::Greedy, true),
        _ => (ModeDecision::Greedy, false),
    }
}

/// Asks for a list of `n_candidates` actions and attaches log-probabilities to each.
pub fn generate_candidates<B: PolicyBackend + ?Sized>(
    backend: &B,
    prompts: &Prompts,
    context: &[Message],
    n_candidates: usize,
    temperature: f64,
    acquisition: LogprobAcquisition,
) -> Result<CandidateBatch, BackendError> {
    let instruction = render(
        &prompts.candidate_generation,
        &[("n", n_candidates.to_string())],
    );
    let request = PolicyRequest {
        context: with_instruction(context, Some(instruction)),
        temperature,
        max_candidates: n_candidates,
        prompt_kind: PromptKind::CandidateList,
    };
    let reply = backend.complete(&request)?;
    let lines = split_candidate_lines(&reply);

    let mut seen = std::collections::HashSet::new();
    let mut kept: Vec<(String, Option<Vec<f64>>)> = Vec::new();
    for (text, lps) in lines {
        if kept.len() >= n_candidates {
            break;
        }
        if text.is_empty() || !seen.insert(text.clone()) {
            continue;
        }
        kept.push((text, lps));
    }

    let mut batch = CandidateBatch {
        candidates: Vec::with_capacity(kept.len()),
        sources: Vec::with_capacity(kept.len()),
        tokens: reply.token_count,
        rescore_calls: 0,
    };
    let rescore = acquisition == LogprobAcquisition::Rescore && backend.supports_rescoring();
    for (text, sliced) in kept {
        let mut chosen = None;
        if rescore {
            batch.rescore_calls += 1;
            match backend.rescore(context, &text) {
                Ok(Some(lps)) if !lps.is_empty() => {
                    chosen = Some((sanitize_logprobs(lps), LogprobSource::Rescored))
                }
                Ok(_) => {}
                Err(e) => log::warn!("rescoring {text:?} failed, using sliced log-probs: {e}"),
            }
        }
        let (lps, source) = chosen.unwrap_or_else(|| match sliced {
            Some(lps) if !lps.is_empty() => (sanitize_logprobs(lps), LogprobSource::Sliced),
            _ => (vec![0.0], LogprobSource::Missing),
        });
        batch.candidates.push(CandidateAction {
            text,
            token_logprobs: lps,
        });
        batch.sources.push(source);
    }
    Ok(batch)
}

/// Decodes one action at temperature 0.
pub fn greedy_action<B: PolicyBackend + ?Sized>(
    backend: &B,
    context: &[Message],
    kind: PromptKind,
) -> Result<GreedyOutcome, BackendError> {
    let request = PolicyRequest {
        context: context.to_vec(),
        temperature: 0.0,
        max_candidates: 1,
        prompt_kind: kind,
    };
    let reply = backend.complete(&request)?;
    let lines = split_candidate_lines(&reply);
    let (text, lps) = lines
        .into_iter()
        .find(|(t, _)| !t.is_empty())
        .unwrap_or_default();
    let lps = match lps {
        Some(lps) if !lps.is_empty() => sanitize_logprobs(lps),
        _ => vec![0.0],
    };
    Ok(GreedyOutcome {
        action: CandidateAction {
            text,
            token_logprobs: lps,
        },
        tokens: reply.token_count,
    })
}

/// Asks the policy for λ, retrying once on an unparseable reply before using `fallback`.
pub fn sample_lambda<B: PolicyBackend + ?Sized>(
    backend: &B,
    prompts: &Prompts,
    context: &[Message],
    bounds: (f64, f64),
    fallback: f64,
    temperature: f64,
) -> Result<LambdaOutcome, BackendError> {
    let instruction = render(
        &prompts.lambda_decision,
        &[
            ("lambda_min", fmt_bound(bounds.0)),
            ("lambda_max", fmt_bound(bounds.1)),
        ],
    );
    let request = PolicyRequest {
        context: with_instruction(context, Some(instruction)),
        temperature,
        max_candidates: 1,
        prompt_kind: PromptKind::LambdaDecision,
    };
    let mut tokens = 0;
    for attempt in 1..=2 {
        let reply = backend.complete(&request)?;
        tokens += reply.token_count;
        if let Some(v) = crate::schedule::try_parse_lambda(&reply.text) {
            return Ok(LambdaOutcome {
                lambda: v.clamp(bounds.0, bounds.1),
                parsed: true,
                attempts: attempt,
                tokens,
            });
        }
    }
    Ok(LambdaOutcome {
        lambda: fallback.clamp(bounds.0, bounds.1),
        parsed: false,
        attempts: 2,
        tokens,
    })
}

fn fmt_bound(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        x.to_string()
    }
}

fn sanitize_logprobs(lps: Vec<f64>) -> Vec<f64> {
    lps.into_iter()
        .map(|lp| {
            if lp.is_nan() {
                LOGPROB_FLOOR
            } else {
                lp.clamp(LOGPROB_FLOOR, 0.0)
            }
        })
        .collect()
}

/// Parses a JSON object from a reply, tolerating surrounding prose or fences.
pub fn parse_json_object(raw: &str) -> Option<Value> {
    let trimmed = raw.trim();
    if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(trimmed) {
        return Some(v);
    }
    let start = trimmed.find('{')?;
    let end = trimmed.rfind('}')?;
    if end <= start {
        return None;
    }
    match serde_json::from_str::<Value>(&trimmed[start..=end]) {
        Ok(v @ Value::Object(_)) => Some(v),
        _ => None,
    }
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"^(?:[-*•+>]+\s+|[-*•+]+$|\(?\d+[.):]\s+|\(?\d+[.):]$|\d+\s+-\s+|["'`“”‘’]+)"#)
            .expect("valid marker regex")
    })
}

/// Byte length of the leading bullet / numbering / quote run in `line`.
fn marker_prefix_len(line: &str) -> usize {
    let mut rest = line;
    loop {
        let trimmed = rest.trim_start();
        match marker_re().find(trimmed) {
            Some(m) if m.end() > 0 => rest = &trimmed[m.end()..],
            _ => {
                rest = trimmed;
                break;
            }
        }
    }
    line.len() - rest.len()
}

/// Canonical action text: strips list markers and surrounding quotes,
/// lowercases, and collapses internal whitespace.
pub fn normalize_action(line: &str) -> String {
    let mut current = line.to_string();
    loop {
        let stripped = &current[marker_prefix_len(&current)..];
        let stripped = stripped
            .trim_end()
            .trim_end_matches(['"', '\'', '`', '“', '”', '‘', '’'])
            .trim_end();
        let next = stripped
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase();
        if next == current {
            return next;
        }
        current = next;
    }
}

/// Splits a reply into normalized lines, each with the log-probabilities of
/// the tokens that carry its content (separator and marker tokens excluded).
pub fn split_candidate_lines(reply: &PolicyReply) -> Vec<(String, Option<Vec<f64>>)> {
    match &reply.token_logprobs {
        None => reply
            .text
            .lines()
            .map(|l| (normalize_action(l), None))
            .collect(),
        Some(tokens) => slice_token_lines(tokens)
            .into_iter()
            .map(|(raw, lps)| (normalize_action(&raw), Some(lps)))
            .collect(),
    }
}

fn slice_token_lines(tokens: &[TokenLogprob]) -> Vec<(String, Vec<f64>)> {
    // (line text, [(content start, content end, logprob)]) with byte offsets into the line
    let mut lines: Vec<(String, Vec<(usize, usize, f64)>)> = vec![(String::new(), Vec::new())];
    for tok in tokens {
        let mut attributed = false;
        for (i, segment) in tok.token.split('\n').enumerate() {
            if i > 0 {
                lines.push((String::new(), Vec::new()));
            }
            let line = lines.last_mut().expect("at least one line");
            let start = line.0.len();
            line.0.push_str(segment);
            if !attributed && !segment.trim().is_empty() {
                let lead = segment.len() - segment.trim_start().len();
                let content_end = start + segment.trim_end().len();
                line.1.push((start + lead, content_end, tok.logprob));
                attributed = true;
            }
        }
    }
    lines
        .into_iter()
        .map(|(text, toks)| {
            let prefix = marker_prefix_len(&text);
            let lps = toks
                .into_iter()
                .filter(|(_, end, _)| *end > prefix)
                .map(|(_, _, lp)| lp)
                .collect();
            (text, lps)
        })
        .collect()
}
