//! Language-model bandit agents: a plain temperature-sampled policy and the
//! explore/greedy agent, both driven by the summarized-history prompt.

use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ArmStats, BanditAgent, BanditRng, Pull};
use crate::agent::{DoraAgent, DoraParams, FallbackReason, LogprobScorer, StepRecord};
use crate::error::{contract, Result};
use crate::policy::{Message, PolicyBackend, PolicyRequest, PromptKind};
use crate::prompts::{render, Prompts};
use crate::schedule::{LambdaSchedule, LambdaSource, DEFAULT_GROWTH};
use crate::scoring::CandidateAction;

/// Arm order of the button colors.
pub const COLORS: [&str; 5] = ["blue", "green", "red", "yellow", "purple"];

pub fn color_index(color: &str) -> Option<usize> {
    COLORS.iter().position(|c| c.eq_ignore_ascii_case(color))
}

/// The exact reply format for pressing `arm`.
pub fn answer_envelope(arm: usize) -> String {
    format!("<Answer>I will press {} button</Answer>", COLORS[arm])
}

/// Parses a raw reply. Only the color is case-insensitive; everything else
/// must match the envelope exactly, apart from surrounding whitespace.
pub fn parse_answer(reply: &str) -> Option<usize> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"^\s*<Answer>I will press ([A-Za-z]+) button</Answer>\s*$")
            .expect("valid regex")
    });
    let caps = re.captures(reply)?;
    color_index(&caps[1])
}

/// Maps a normalized candidate action to an arm. Candidates are lowercased
/// by normalization, so this accepts the envelope in any case as well as
/// `press <color> button`, `<color> button` and a bare color.
pub fn arm_from_action(action: &str) -> Option<usize> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(
            r"(?i)^\s*(?:<answer>\s*)?(?:i will press |press )?([a-z]+)(?: button)?\.?(?:\s*</answer>)?\s*$",
        )
        .expect("valid regex")
    });
    let caps = re.captures(action)?;
    color_index(&caps[1])
}

pub fn render_mab_system(prompts: &Prompts, arms: usize, horizon: u32) -> String {
    render(
        &prompts.mab_system,
        &[("K", arms.to_string()), ("T", horizon.to_string())],
    )
}

/// Summarized history: per-color counts and averages. Buttons never pressed
/// show no average.
pub fn render_mab_history(prompts: &Prompts, t: u32, stats: &ArmStats) -> String {
    let mut template = prompts.mab_history.clone();
    let mut vars = vec![("t", t.to_string())];
    let mut keys = Vec::new();
    for (arm, color) in COLORS.iter().enumerate() {
        let n = stats.counts.get(arm).copied().unwrap_or(0);
        if n == 0 {
            template = template.replace(&format!(", average reward {{r_{color}}}"), "");
        }
        keys.push((format!("n_{color}"), n.to_string()));
        keys.push((
            format!("r_{color}"),
            format!("{:.2}", if n == 0 { 0.0 } else { stats.mean(arm) }),
        ));
    }
    vars.extend(keys.iter().map(|(k, v)| (k.as_str(), v.clone())));
    render(&template, &vars)
}

fn check_arms(arms: usize) -> Result<()> {
    if arms == 0 || arms > COLORS.len() {
        return Err(contract(format!(
            "language-model bandit agents support 1..={} arms, got {arms}",
            COLORS.len()
        )));
    }
    Ok(())
}

/// Sampling temperature over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemperatureSchedule {
    Fixed {
        tau: f64,
    },
    /// `τ(t) = end + (start - end) (e^{k (T - t)/T} - 1) / (e^k - 1)`:
    /// falls fast early and reaches `end` at `t = T`.
    Decaying {
        start: f64,
        end: f64,
        k: f64,
    },
}

impl TemperatureSchedule {
    pub fn decaying() -> Self {
        TemperatureSchedule::Decaying {
            start: 2.0,
            end: 0.0,
            k: DEFAULT_GROWTH,
        }
    }

    pub fn at(&self, t: u32, horizon: u32) -> f64 {
        match *self {
            TemperatureSchedule::Fixed { tau } => tau,
            TemperatureSchedule::Decaying { start, end, k } => {
                let remaining = horizon.saturating_sub(t.min(horizon));
                let sched = LambdaSchedule {
                    lambda_min: end,
                    lambda_max: start,
                    k,
                    horizon: horizon.max(1),
                };
                sched.at(remaining).unwrap_or(end)
            }
        }
    }
}

/// Asks for one envelope per step at the scheduled temperature.
pub struct LlmTemperatureAgent<B> {
    backend: B,
    prompts: Arc<Prompts>,
    schedule: TemperatureSchedule,
    arms: usize,
    horizon: u32,
    last: Option<StepRecord>,
}

impl<B: PolicyBackend> LlmTemperatureAgent<B> {
    pub fn new(
        backend: B,
        prompts: Arc<Prompts>,
        schedule: TemperatureSchedule,
        arms: usize,
        horizon: u32,
    ) -> Result<Self> {
        check_arms(arms)?;
        Ok(Self {
            backend,
            prompts,
            schedule,
            arms,
            horizon,
            last: None,
        })
    }
}

impl<B: PolicyBackend> BanditAgent for LlmTemperatureAgent<B> {
    fn name(&self) -> String {
        match self.schedule {
            TemperatureSchedule::Fixed { tau } => format!("llm_temp_{tau}"),
            TemperatureSchedule::Decaying { .. } => "llm_temp_decay".into(),
        }
    }

    fn select(&mut self, t: u32, stats: &ArmStats, _rng: &mut BanditRng) -> Pull {
        let observation = render_mab_history(&self.prompts, t, stats);
        let request = PolicyRequest {
            context: vec![
                Message::system(render_mab_system(&self.prompts, self.arms, self.horizon)),
                Message::user(observation.clone()),
            ],
            temperature: self.schedule.at(t, self.horizon),
            max_candidates: 1,
            prompt_kind: PromptKind::MabAnswer,
        };
        let mut record = StepRecord::new(t, &observation);
        record.backend_calls = 1;
        let pull = match self.backend.complete(&request) {
            Ok(reply) => {
                record.tokens = reply.token_count;
                record.chosen_action = reply.text.clone();
                match parse_answer(&reply.text).filter(|a| *a < self.arms) {
                    Some(a) => Pull::Arm(a),
                    None => {
                        record.fallback_reason = Some(FallbackReason::ParseFailure);
                        Pull::Invalid
                    }
                }
            }
            Err(e) => {
                record.fallback_reason = Some(FallbackReason::BackendError);
                record.error = Some(e.to_string());
                Pull::Invalid
            }
        };
        self.last = Some(record);
        pull
    }

    fn take_record(&mut self) -> Option<StepRecord> {
        self.last.take()
    }
}

/// How the explore/greedy agent scores bandit candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BanditScorer {
    /// Token log-probability score.
    #[default]
    Logprob,
    /// Each candidate's arm's running empirical mean (0 before its first pull).
    EmpiricalMean,
}

/// Explore/greedy agent on the bandit: the observation is the summarized
/// history, candidates are mapped to arms by color.
pub struct DoraBanditAgent<B> {
    agent: DoraAgent<B>,
    scorer: BanditScorer,
    arms: usize,
    horizon: u32,
    label: String,
    last: Option<StepRecord>,
}

impl<B: PolicyBackend> DoraBanditAgent<B> {
    pub fn new(
        backend: B,
        prompts: Arc<Prompts>,
        lambda_source: LambdaSource,
        params: DoraParams,
        scorer: BanditScorer,
        arms: usize,
        horizon: u32,
    ) -> Result<Self> {
        check_arms(arms)?;
        let label = match lambda_source {
            LambdaSource::Scheduled(_) => "dora_scheduled",
            LambdaSource::PolicySampled { .. } => "dora_auto",
        }
        .to_string();
        Ok(Self {
            agent: DoraAgent::new(backend, prompts, lambda_source, params)?,
            scorer,
            arms,
            horizon,
            label,
            last: None,
        })
    }

    pub fn inner(&self) -> &DoraAgent<B> {
        &self.agent
    }
}

impl<B: PolicyBackend> BanditAgent for DoraBanditAgent<B> {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn select(&mut self, t: u32, stats: &ArmStats, rng: &mut BanditRng) -> Pull {
        let system = render_mab_system(self.agent.prompts(), self.arms, self.horizon);
        let observation = render_mab_history(self.agent.prompts(), t, stats);
        let history = [Message::system(system)];
        let record = match self.scorer {
            BanditScorer::Logprob => {
                let scorer = LogprobScorer(self.agent.params().score);
                self.agent
                    .step_with_scorer(t, &history, &observation, &scorer, rng)
            }
            BanditScorer::EmpiricalMean => {
                let scorer = |cands: &[CandidateAction]| -> Result<Vec<f64>> {
                    Ok(cands
                        .iter()
                        .map(|c| {
                            arm_from_action(&c.text)
                                .filter(|a| *a < stats.arms())
                                .map_or(0.0, |a| stats.mean(a))
                        })
                        .collect())
                };
                self.agent
                    .step_with_scorer(t, &history, &observation, &scorer, rng)
            }
        };
        let pull = arm_from_action(&record.chosen_action)
            .filter(|a| *a < self.arms)
            .map_or(Pull::Invalid, Pull::Arm);
        self.last = Some(record);
        pull
    }

    fn take_record(&mut self) -> Option<StepRecord> {
        self.last.take()
    }
}
