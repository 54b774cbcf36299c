//! Bernoulli K-armed bandit: the hard instance, a seeded run loop,
//! and the regret metrics.
//!
//! Regret is pseudo-regret against the true means, with one gap charged for
//! every invalid step.

mod classical;
mod llm;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::StepRecord;
use crate::error::{contract, Result};

pub use classical::{
    greedy_arm, thompson_policy, ucb_policy, BetaPosteriors, ClassicalAgent, ClassicalKind,
    EpsGreedy, DEFAULT_EPSILON, DEFAULT_EPS_DECAY,
};
pub use llm::{
    answer_envelope, arm_from_action, color_index, parse_answer, render_mab_history,
    render_mab_system, BanditScorer, DoraBanditAgent, LlmTemperatureAgent, TemperatureSchedule,
    COLORS,
};

/// Random stream used by every run. Stream 0 of a seed draws the instance,
/// stream 1 drives the agent and the rewards.
pub type BanditRng = ChaCha8Rng;

pub const DEFAULT_ARMS: usize = 5;
pub const DEFAULT_GAP: f64 = 0.2;
pub const DEFAULT_HORIZON: u32 = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditInstance {
    pub arm_means: Vec<f64>,
    pub best_arm: usize,
    pub horizon: u32,
    pub gap: f64,
}

impl BanditInstance {
    pub fn arms(&self) -> usize {
        self.arm_means.len()
    }

    pub fn best_mean(&self) -> f64 {
        self.arm_means[self.best_arm]
    }
}

/// One arm at `0.5 + Δ/2`, the rest at `0.5 - Δ/2`. The best arm is drawn
/// uniformly from `seed`.
pub fn make_hard_instance(k: usize, delta: f64, horizon: u32, seed: u64) -> Result<BanditInstance> {
    if k < 2 {
        return Err(contract(format!("need at least 2 arms, got {k}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(contract(format!("gap {delta} must lie in (0, 1)")));
    }
    if horizon == 0 {
        return Err(contract("horizon must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let best_arm = rng.random_range(0..k);
    let mut arm_means = vec![0.5 - delta / 2.0; k];
    arm_means[best_arm] = 0.5 + delta / 2.0;
    Ok(BanditInstance {
        arm_means,
        best_arm,
        horizon,
        gap: delta,
    })
}

/// Per-arm pull counts and reward sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub counts: Vec<u64>,
    pub sums: Vec<f64>,
}

impl ArmStats {
    pub fn new(k: usize) -> Self {
        Self {
            counts: vec![0; k],
            sums: vec![0.0; k],
        }
    }

    pub fn arms(&self) -> usize {
        self.counts.len()
    }

    /// Empirical mean; 0 for an arm never pulled.
    pub fn mean(&self, arm: usize) -> f64 {
        match self.counts[arm] {
            0 => 0.0,
            n => self.sums[arm] / n as f64,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn first_unpulled(&self) -> Option<usize> {
        self.counts.iter().position(|&n| n == 0)
    }

    pub fn record(&mut self, arm: usize, reward: f64) {
        self.counts[arm] += 1;
        self.sums[arm] += reward;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pull {
    Arm(usize),
    Invalid,
}

/// Anything that picks arms. One instance per run.
pub trait BanditAgent {
    fn name(&self) -> String;

    fn select(&mut self, t: u32, stats: &ArmStats, rng: &mut BanditRng) -> Pull;

    fn observe(&mut self, _arm: usize, _reward: f64) {}

    /// Decision record of the last `select`, for agents that make one.
    fn take_record(&mut self) -> Option<StepRecord> {
        None
    }
}

impl<A: BanditAgent + ?Sized> BanditAgent for Box<A> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn select(&mut self, t: u32, stats: &ArmStats, rng: &mut BanditRng) -> Pull {
        (**self).select(t, stats, rng)
    }
    fn observe(&mut self, arm: usize, reward: f64) {
        (**self).observe(arm, reward)
    }
    fn take_record(&mut self) -> Option<StepRecord> {
        (**self).take_record()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditRun {
    pub seed: u64,
    /// Arm pulled at each step; `None` marks an invalid step.
    pub pulls: Vec<Option<usize>>,
    pub rewards: Vec<u8>,
    pub stats: ArmStats,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<StepRecord>,
    pub backend_errors: usize,
}

impl BanditRun {
    pub fn invalid_count(&self) -> usize {
        self.pulls.iter().filter(|p| p.is_none()).count()
    }
}

pub fn run_rng(seed: u64) -> BanditRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Plays `instance.horizon` steps. Rewards come from the same per-run stream
/// as the agent's own randomness, in step order.
pub fn run_bandit<A: BanditAgent + ?Sized>(
    agent: &mut A,
    instance: &BanditInstance,
    seed: u64,
) -> BanditRun {
    let mut rng = run_rng(seed);
    let mut stats = ArmStats::new(instance.arms());
    let horizon = instance.horizon as usize;
    let mut run = BanditRun {
        seed,
        pulls: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        stats: stats.clone(),
        records: Vec::new(),
        backend_errors: 0,
    };
    for t in 0..instance.horizon {
        let pull = agent.select(t, &stats, &mut rng);
        if let Some(rec) = agent.take_record() {
            if rec.is_backend_error() {
                run.backend_errors += 1;
            }
            run.records.push(rec);
        }
        match pull {
            Pull::Arm(a) if a < instance.arms() => {
                let reward = u8::from(rng.random::<f64>() < instance.arm_means[a]);
                stats.record(a, reward as f64);
                agent.observe(a, reward as f64);
                run.pulls.push(Some(a));
                run.rewards.push(reward);
            }
            _ => {
                run.pulls.push(None);
                run.rewards.push(0);
            }
        }
    }
    run.stats = stats;
    run
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditMetrics {
    pub mean_avg_reward: f64,
    pub cumulative_regret: f64,
    pub best_arm_fraction: f64,
    pub suffix_failure: bool,
    pub invalid_count: usize,
}

/// Suffix failure looks at steps `t > T/2` with `t` counted from 1.
pub fn compute_metrics(run: &BanditRun, instance: &BanditInstance) -> BanditMetrics {
    let horizon = instance.horizon as f64;
    let best = instance.best_mean();
    let mut regret = 0.0;
    let mut best_pulls = 0usize;
    let mut late_best = false;
    for (i, pull) in run.pulls.iter().enumerate() {
        match pull {
            Some(a) => {
                regret += best - instance.arm_means[*a];
                if *a == instance.best_arm {
                    best_pulls += 1;
                    if 2 * (i + 1) > instance.horizon as usize {
                        late_best = true;
                    }
                }
            }
            None => regret += instance.gap,
        }
    }
    let total_reward: u64 = run.rewards.iter().map(|&r| r as u64).sum();
    BanditMetrics {
        mean_avg_reward: total_reward as f64 / horizon,
        cumulative_regret: regret,
        best_arm_fraction: best_pulls as f64 / horizon,
        suffix_failure: !late_best,
        invalid_count: run.invalid_count(),
    }
}

/// Batch averages in the shape of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditSummary {
    pub agent: String,
    pub mean_avg_reward: f64,
    pub suffix_fail_freq: f64,
    pub best_arm_frac: f64,
    pub cum_regret: f64,
    /// Invalid steps summed over all runs.
    pub invalid_count: usize,
    pub runs: usize,
    pub complete: bool,
}

impl BanditSummary {
    pub fn from_metrics(
        agent: impl Into<String>,
        metrics: &[BanditMetrics],
        expected_runs: usize,
    ) -> Self {
        let n = metrics.len().max(1) as f64;
        let mean = |f: &dyn Fn(&BanditMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
        Self {
            agent: agent.into(),
            mean_avg_reward: mean(&|m| m.mean_avg_reward),
            suffix_fail_freq: mean(&|m| f64::from(u8::from(m.suffix_failure))),
            best_arm_frac: mean(&|m| m.best_arm_fraction),
            cum_regret: mean(&|m| m.cumulative_regret),
            invalid_count: metrics.iter().map(|m| m.invalid_count).sum(),
            runs: metrics.len(),
            complete: metrics.len() == expected_runs,
        }
    }
}
