//! The explore/greedy step loop.
//!
//! Each step builds the context from history plus the current observation,
//! asks the policy whether to explore, and then either decodes a greedy
//! action or generates a candidate list, drops candidates already tried at
//! this observation, scores the rest, and samples one through the
//! λ-softmax. The chosen action is recorded against the observation in both
//! branches.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, BackendError, Result};
use crate::policy::{
    self, LogprobAcquisition, LogprobSource, Message, ModeDecision, PolicyBackend, PromptKind,
    DEFAULT_N_CANDIDATES, DEFAULT_TAU_CANDIDATES, DEFAULT_TAU_DECISION, DEFAULT_TAU_LAMBDA,
};
use crate::prompts::Prompts;
use crate::schedule::{lambda_exp, LambdaSource};
use crate::scoring::{
    lambda_probabilities, sample_categorical, score_candidates, CandidateAction, ScoreParams,
};
use crate::textenv::{TextEnv, TextEnvStep};

pub const DEFAULT_HISTORY_WINDOW: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DoraParams {
    pub n_candidates: usize,
    pub tau_decision: f64,
    pub tau_candidates: f64,
    pub tau_lambda: f64,
    pub score: ScoreParams,
    pub acquisition: LogprobAcquisition,
    /// (observation, action, reward) triples kept in the text-env context.
    pub history_window: usize,
    /// Request kind used for the greedy branch.
    pub greedy_kind: PromptKind,
}

impl Default for DoraParams {
    fn default() -> Self {
        Self {
            n_candidates: DEFAULT_N_CANDIDATES,
            tau_decision: DEFAULT_TAU_DECISION,
            tau_candidates: DEFAULT_TAU_CANDIDATES,
            tau_lambda: DEFAULT_TAU_LAMBDA,
            score: ScoreParams::default(),
            acquisition: LogprobAcquisition::default(),
            history_window: DEFAULT_HISTORY_WINDOW,
            greedy_kind: PromptKind::GreedyAction,
        }
    }
}

impl DoraParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_candidates == 0 {
            return Err(contract("n_candidates must be >= 1"));
        }
        for (name, t) in [
            ("tau_decision", self.tau_decision),
            ("tau_candidates", self.tau_candidates),
            ("tau_lambda", self.tau_lambda),
        ] {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(contract(format!("{name} {t} must be finite and >= 0")));
            }
        }
        self.score.validate()
    }
}

/// Canonical key for an observation: exact text minus trailing whitespace.
pub fn observation_key(observation: &str) -> &str {
    observation.trim_end()
}

/// Actions already taken, per observation, for the current episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsedActionRegistry {
    used: BTreeMap<String, BTreeSet<String>>,
}

impl UsedActionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, observation: &str, action: &str) -> bool {
        self.used
            .get(observation_key(observation))
            .is_some_and(|set| set.contains(action))
    }

    /// Returns true if the action was new for this observation.
    pub fn insert(&mut self, observation: &str, action: &str) -> bool {
        self.used
            .entry(observation_key(observation).to_string())
            .or_default()
            .insert(action.to_string())
    }

    pub fn actions_for(&self, observation: &str) -> usize {
        self.used
            .get(observation_key(observation))
            .map_or(0, BTreeSet::len)
    }

    pub fn observations(&self) -> usize {
        self.used.len()
    }

    pub fn clear(&mut self) {
        self.used.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackReason {
    EmptyCandidates,
    ParseFailure,
    BackendError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub action: String,
    pub token_logprobs: Vec<f64>,
    pub logprob_source: LogprobSource,
    pub score: f64,
    pub prob: f64,
}

/// Everything one step decided, for logging and audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    pub observation: String,
    pub mode: ModeDecision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<ScoredCandidate>,
    /// Generated candidates dropped because they were already used here.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub filtered_out: Vec<String>,
    pub chosen_action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<FallbackReason>,
    /// True when the policy's λ reply was unparseable and the fallback was used.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub lambda_fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub backend_calls: u32,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub rescore_calls: u32,
    pub tokens: u64,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl StepRecord {
    pub(crate) fn new(step: u32, observation: &str) -> Self {
        Self {
            step,
            observation: observation.to_string(),
            mode: ModeDecision::Greedy,
            lambda: None,
            candidates: Vec::new(),
            filtered_out: Vec::new(),
            chosen_action: String::new(),
            fallback_reason: None,
            lambda_fallback: false,
            error: None,
            backend_calls: 0,
            rescore_calls: 0,
            tokens: 0,
        }
    }

    pub fn is_backend_error(&self) -> bool {
        self.fallback_reason == Some(FallbackReason::BackendError)
    }
}

/// Turns a retained candidate set into scores.
pub trait CandidateScorer {
    fn score(&self, candidates: &[CandidateAction]) -> Result<Vec<f64>>;
}

/// Mean/variance log-probability score.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogprobScorer(pub ScoreParams);

impl CandidateScorer for LogprobScorer {
    fn score(&self, candidates: &[CandidateAction]) -> Result<Vec<f64>> {
        score_candidates(candidates, &self.0)
    }
}

impl<F> CandidateScorer for F
where
    F: Fn(&[CandidateAction]) -> Result<Vec<f64>>,
{
    fn score(&self, candidates: &[CandidateAction]) -> Result<Vec<f64>> {
        self(candidates)
    }
}

/// Borrowed inputs of one step.
pub struct StepInputs<'a, B: ?Sized> {
    pub backend: &'a B,
    pub prompts: &'a Prompts,
    pub lambda_source: &'a LambdaSource,
    pub params: &'a DoraParams,
    pub scorer: &'a dyn CandidateScorer,
}

/// One explore/greedy step. Backend failures come back as a record with
/// `fallback_reason = BackendError` and an empty (invalid) action.
pub fn dora_step<B, R>(
    inputs: &StepInputs<'_, B>,
    registry: &mut UsedActionRegistry,
    history: &[Message],
    observation: &str,
    step: u32,
    rng: &mut R,
) -> StepRecord
where
    B: PolicyBackend + ?Sized,
    R: Rng + ?Sized,
{
    let mut record = StepRecord::new(step, observation);
    let mut context = history.to_vec();
    context.push(Message::user(observation));
    match run_step(
        inputs,
        registry,
        &context,
        observation,
        step,
        rng,
        &mut record,
    ) {
        Ok(()) => {
            registry.insert(observation, &record.chosen_action);
        }
        Err(e) => {
            record.fallback_reason = Some(FallbackReason::BackendError);
            record.error = Some(e.to_string());
            record.chosen_action.clear();
        }
    }
    record
}

fn run_step<B, R>(
    inputs: &StepInputs<'_, B>,
    registry: &UsedActionRegistry,
    context: &[Message],
    observation: &str,
    step: u32,
    rng: &mut R,
    record: &mut StepRecord,
) -> std::result::Result<(), BackendError>
where
    B: PolicyBackend + ?Sized,
    R: Rng + ?Sized,
{
    let StepInputs {
        backend,
        prompts,
        lambda_source,
        params,
        scorer,
    } = inputs;

    record.backend_calls += 1;
    let mode = policy::decide_mode(*backend, prompts, context, params.tau_decision)?;
    record.tokens += mode.tokens;
    record.mode = mode.mode;
    if !mode.parsed {
        record.fallback_reason = Some(FallbackReason::ParseFailure);
    }

    if mode.mode == ModeDecision::Explore {
        let lambda = match lambda_source {
            LambdaSource::Scheduled(sched) => {
                lambda_exp(sched, step.min(sched.horizon)).unwrap_or(sched.lambda_max)
            }
            LambdaSource::PolicySampled { bounds, fallback } => {
                let out = policy::sample_lambda(
                    *backend,
                    prompts,
                    context,
                    *bounds,
                    *fallback,
                    params.tau_lambda,
                )?;
                record.backend_calls += out.attempts;
                record.tokens += out.tokens;
                if !out.parsed {
                    record.lambda_fallback = true;
                    record.fallback_reason = Some(FallbackReason::ParseFailure);
                }
                out.lambda
            }
        };
        record.lambda = Some(lambda);

        record.backend_calls += 1;
        let batch = policy::generate_candidates(
            *backend,
            prompts,
            context,
            params.n_candidates,
            params.tau_candidates,
            params.acquisition,
        )?;
        record.tokens += batch.tokens;
        record.rescore_calls += batch.rescore_calls as u32;

        let mut retained = Vec::new();
        let mut sources = Vec::new();
        for (cand, source) in batch.candidates.into_iter().zip(batch.sources) {
            if registry.contains(observation, &cand.text) {
                record.filtered_out.push(cand.text);
            } else {
                retained.push(cand);
                sources.push(source);
            }
        }

        if !retained.is_empty() {
            match scorer
                .score(&retained)
                .and_then(|s| lambda_probabilities(&s, lambda))
            {
                Ok(dist) => {
                    let pick = sample_categorical(&dist, rng);
                    record.chosen_action = retained[pick].text.clone();
                    record.candidates = retained
                        .into_iter()
                        .zip(sources)
                        .zip(dist.scores.iter().zip(&dist.probs))
                        .map(|((cand, source), (score, prob))| ScoredCandidate {
                            action: cand.text,
                            token_logprobs: cand.token_logprobs,
                            logprob_source: source,
                            score: *score,
                            prob: *prob,
                        })
                        .collect();
                    return Ok(());
                }
                Err(e) => {
                    log::warn!("step {step}: scoring failed, taking greedy action: {e}");
                    record.fallback_reason = Some(FallbackReason::ParseFailure);
                }
            }
        } else {
            record.fallback_reason = Some(FallbackReason::EmptyCandidates);
        }
    }

    record.backend_calls += 1;
    let greedy = policy::greedy_action(*backend, context, params.greedy_kind)?;
    record.tokens += greedy.tokens;
    record.chosen_action = greedy.action.text;
    Ok(())
}

/// Owns everything an episode needs besides the environment.
pub struct DoraAgent<B> {
    backend: B,
    prompts: Arc<Prompts>,
    lambda_source: LambdaSource,
    params: DoraParams,
    registry: UsedActionRegistry,
}

impl<B: PolicyBackend> DoraAgent<B> {
    pub fn new(
        backend: B,
        prompts: Arc<Prompts>,
        lambda_source: LambdaSource,
        params: DoraParams,
    ) -> Result<Self> {
        lambda_source.validate()?;
        params.validate()?;
        Ok(Self {
            backend,
            prompts,
            lambda_source,
            params,
            registry: UsedActionRegistry::new(),
        })
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn params(&self) -> &DoraParams {
        &self.params
    }

    pub fn prompts(&self) -> &Prompts {
        &self.prompts
    }

    pub fn registry(&self) -> &UsedActionRegistry {
        &self.registry
    }

    /// Clears per-episode state.
    pub fn reset(&mut self) {
        self.registry.clear();
    }

    pub fn step<R: Rng + ?Sized>(
        &mut self,
        step: u32,
        history: &[Message],
        observation: &str,
        rng: &mut R,
    ) -> StepRecord {
        let scorer = LogprobScorer(self.params.score);
        self.step_with_scorer(step, history, observation, &scorer, rng)
    }

    pub fn step_with_scorer<R: Rng + ?Sized>(
        &mut self,
        step: u32,
        history: &[Message],
        observation: &str,
        scorer: &dyn CandidateScorer,
        rng: &mut R,
    ) -> StepRecord {
        let inputs = StepInputs {
            backend: &self.backend,
            prompts: &self.prompts,
            lambda_source: &self.lambda_source,
            params: &self.params,
            scorer,
        };
        dora_step(&inputs, &mut self.registry, history, observation, step, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub record: StepRecord,
    pub reward: f64,
    pub score: f64,
    pub terminal: bool,
    pub valid_action: bool,
    pub next_observation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub initial_observation: String,
    pub steps: Vec<EpisodeStep>,
    pub total_reward: f64,
    pub final_score: f64,
    pub terminal: bool,
    pub total_tokens: u64,
    /// Set when the environment failed and the log is partial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl EpisodeLog {
    /// Observations at which an action was taken, in order.
    pub fn observations(&self) -> Vec<&str> {
        self.steps
            .iter()
            .map(|s| s.record.observation.as_str())
            .collect()
    }

    /// (observation, action) pairs in order.
    pub fn pairs(&self) -> Vec<(&str, &str)> {
        self.steps
            .iter()
            .map(|s| {
                (
                    s.record.observation.as_str(),
                    s.record.chosen_action.as_str(),
                )
            })
            .collect()
    }

    pub fn final_observation(&self) -> &str {
        self.steps
            .last()
            .map_or(self.initial_observation.as_str(), |s| {
                s.next_observation.as_str()
            })
    }

    pub fn backend_errors(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.record.is_backend_error())
            .count()
    }

    pub fn invalid_actions(&self) -> usize {
        self.steps.iter().filter(|s| !s.valid_action).count()
    }
}

/// Renders the text-env context: system prompt, the last `window` triples, nothing else.
pub fn text_history(
    system_prompt: &str,
    triples: &VecDeque<(String, String, f64)>,
) -> Vec<Message> {
    let mut msgs = vec![Message::system(system_prompt)];
    for (obs, action, reward) in triples {
        msgs.push(Message::user(obs.clone()));
        msgs.push(Message::assistant(action.clone()));
        msgs.push(Message::user(format!("Reward: {reward}")));
    }
    msgs
}

/// Runs one episode until the environment terminates or `max_steps` is reached.
pub fn run_episode<B, E, R>(
    agent: &mut DoraAgent<B>,
    env: &mut E,
    seed: u64,
    max_steps: u32,
    rng: &mut R,
) -> Result<EpisodeLog>
where
    B: PolicyBackend,
    E: TextEnv + ?Sized,
    R: Rng + ?Sized,
{
    if max_steps == 0 {
        return Err(contract("max_steps must be >= 1"));
    }
    agent.reset();
    let mut observation = env.reset(seed);
    let mut log = EpisodeLog {
        initial_observation: observation.clone(),
        steps: Vec::new(),
        total_reward: 0.0,
        final_score: 0.0,
        terminal: false,
        total_tokens: 0,
        aborted: None,
    };
    let mut triples: VecDeque<(String, String, f64)> = VecDeque::new();
    let system = agent.prompts().zero_shot_system.clone();

    for t in 0..max_steps {
        let history = text_history(&system, &triples);
        let record = agent.step(t, &history, &observation, rng);
        log.total_tokens += record.tokens;
        let outcome: Result<TextEnvStep> = env.step(&record.chosen_action);
        let step = match outcome {
            Ok(s) => s,
            Err(e) => {
                log.aborted = Some(e.to_string());
                break;
            }
        };
        log.total_reward += step.reward;
        log.final_score = step.score;
        log.terminal = step.terminal;
        triples.push_back((
            observation.clone(),
            record.chosen_action.clone(),
            step.reward,
        ));
        while triples.len() > agent.params().history_window {
            triples.pop_front();
        }
        observation = step.observation.clone();
        log.steps.push(EpisodeStep {
            record,
            reward: step.reward,
            score: step.score,
            terminal: step.terminal,
            valid_action: step.valid_action,
            next_observation: step.observation,
        });
        if step.terminal {
            break;
        }
    }
    Ok(log)
}
