//! Chat-completion client for any endpoint that speaks the common
//! `/chat/completions` JSON shape, with optional token log-probabilities.
//! Teacher-forced rescoring goes through `/completions` with `echo`.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use serde_json::{json, Value};

use super::{Message, PolicyBackend, PolicyReply, PolicyRequest, PromptKind, Role, TokenLogprob};
use crate::error::BackendError;

pub const ENV_API_BASE: &str = "DORA_API_BASE";
pub const ENV_API_KEY: &str = "DORA_API_KEY";
pub const ENV_MODEL: &str = "DORA_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub api_base: String,
    pub api_key: Option<String>,
    pub model: String,
    /// Retries after the first attempt on transient failures.
    pub retries: u32,
    pub backoff: Duration,
    pub timeout: Duration,
    pub max_tokens: u32,
    pub request_logprobs: bool,
    pub rescore: bool,
}

impl RemoteConfig {
    pub fn new(api_base: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            api_base: api_base.into().trim_end_matches('/').to_string(),
            api_key: None,
            model: model.into(),
            retries: 2,
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
            max_tokens: 512,
            request_logprobs: true,
            rescore: true,
        }
    }

    /// Reads `DORA_API_BASE`, `DORA_API_KEY` and `DORA_MODEL`.
    pub fn from_env() -> Result<Self, BackendError> {
        let base = std::env::var(ENV_API_BASE)
            .map_err(|_| BackendError::NotConfigured(format!("{ENV_API_BASE} is not set")))?;
        let model = std::env::var(ENV_MODEL)
            .map_err(|_| BackendError::NotConfigured(format!("{ENV_MODEL} is not set")))?;
        let mut cfg = Self::new(base, model);
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
    rescore_unsupported: AtomicBool,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("api_base", &self.config.api_base)
            .field("model", &self.config.model)
            .finish()
    }
}

enum Attempt {
    Done(Value),
    Retry(String),
    Fail(BackendError),
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self {
            config,
            agent,
            rescore_unsupported: AtomicBool::new(false),
        }
    }

    pub fn from_env() -> Result<Self, BackendError> {
        Ok(Self::new(RemoteConfig::from_env()?))
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn post_once(&self, path: &str, body: &Value) -> Attempt {
        let url = format!("{}{}", self.config.api_base, path);
        let mut req = self
            .agent
            .post(&url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(body) {
            Err(e) => Attempt::Retry(e.to_string()),
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let parsed = resp.body_mut().read_json::<Value>();
                match status {
                    200..=299 => match parsed {
                        Ok(v) => Attempt::Done(v),
                        Err(e) => Attempt::Fail(BackendError::Protocol(format!(
                            "unreadable JSON body: {e}"
                        ))),
                    },
                    429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
                    _ => Attempt::Fail(BackendError::Transport {
                        attempts: 1,
                        message: format!("HTTP {status}"),
                    }),
                }
            }
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff * 2u32.pow(attempt - 1));
            }
            match self.post_once(path, body) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fail(BackendError::Transport { message, .. }) => {
                    return Err(BackendError::Transport {
                        attempts: attempt + 1,
                        message,
                    })
                }
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(msg) => {
                    log::warn!("{path} attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(BackendError::Transport {
            attempts: self.config.retries + 1,
            message: last,
        })
    }
}

/// Request body for one chat-completion call.
pub(crate) fn chat_body(config: &RemoteConfig, request: &PolicyRequest) -> Value {
    let messages: Vec<Value> = request
        .context
        .iter()
        .map(|m| json!({"role": role_name(m.role), "content": m.content}))
        .collect();
    let max_tokens = match request.prompt_kind {
        PromptKind::CandidateList => config.max_tokens.max(24 * request.max_candidates as u32),
        _ => config.max_tokens,
    };
    json!({
        "model": config.model,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": max_tokens,
        "logprobs": config.request_logprobs,
    })
}

pub(crate) fn parse_chat_response(body: &Value) -> Result<PolicyReply, BackendError> {
    let choice = body
        .pointer("/choices/0")
        .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Protocol("choice has no message content".into()))?
        .to_string();
    let token_logprobs = choice
        .pointer("/logprobs/content")
        .and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .filter_map(|item| {
                    Some(TokenLogprob {
                        token: item.get("token")?.as_str()?.to_string(),
                        logprob: item.get("logprob")?.as_f64()?,
                    })
                })
                .collect::<Vec<_>>()
        })
        .filter(|v| !v.is_empty());
    let token_count = body
        .pointer("/usage/completion_tokens")
        .and_then(Value::as_u64)
        .or_else(|| token_logprobs.as_ref().map(|t| t.len() as u64))
        .unwrap_or_else(|| text.split_whitespace().count() as u64);
    Ok(PolicyReply {
        text,
        token_logprobs,
        token_count,
    })
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

/// Flat transcript used as the rescoring prefix.
pub(crate) fn render_transcript(context: &[Message]) -> String {
    let mut out = String::new();
    for m in context {
        out.push_str(role_name(m.role));
        out.push_str(": ");
        out.push_str(&m.content);
        out.push('\n');
    }
    out.push_str("assistant: ");
    out
}

/// Log-probabilities of echoed tokens that fall inside `[start, end)` (character offsets).
pub(crate) fn echoed_logprobs(body: &Value, start: usize, end: usize) -> Option<Vec<f64>> {
    let lp = body.pointer("/choices/0/logprobs")?;
    let offsets = lp.get("text_offset")?.as_array()?;
    let values = lp.get("token_logprobs")?.as_array()?;
    let out: Vec<f64> = offsets
        .iter()
        .zip(values)
        .filter_map(|(off, v)| {
            let off = off.as_u64()? as usize;
            (off >= start && off < end).then(|| v.as_f64()).flatten()
        })
        .collect();
    (!out.is_empty()).then_some(out)
}

impl PolicyBackend for RemoteBackend {
    fn complete(&self, request: &PolicyRequest) -> Result<PolicyReply, BackendError> {
        let body = self.post("/chat/completions", &chat_body(&self.config, request))?;
        parse_chat_response(&body)
    }

    fn supports_rescoring(&self) -> bool {
        self.config.rescore && !self.rescore_unsupported.load(Ordering::Relaxed)
    }

    fn rescore(
        &self,
        context: &[Message],
        continuation: &str,
    ) -> Result<Option<Vec<f64>>, BackendError> {
        if !self.supports_rescoring() {
            return Ok(None);
        }
        let prefix = render_transcript(context);
        let start = prefix.chars().count();
        let end = start + continuation.chars().count();
        let body = json!({
            "model": self.config.model,
            "prompt": format!("{prefix}{continuation}"),
            "max_tokens": 1,
            "temperature": 0.0,
            "echo": true,
            "logprobs": 0,
        });
        match self.post("/completions", &body) {
            Ok(v) => {
                let lps = echoed_logprobs(&v, start, end);
                if lps.is_none() {
                    self.rescore_unsupported.store(true, Ordering::Relaxed);
                    log::info!("endpoint returned no echoed log-probs; slicing from now on");
                }
                Ok(lps)
            }
            Err(BackendError::Transport { message, .. }) if message.starts_with("HTTP 4") => {
                self.rescore_unsupported.store(true, Ordering::Relaxed);
                log::info!("rescoring endpoint unavailable ({message}); slicing from now on");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}
