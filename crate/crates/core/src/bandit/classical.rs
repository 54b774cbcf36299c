//! Classical baselines: UCB, Thompson sampling, greedy, ε-greedy.
//! Ties always go to the lowest arm index.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::{ArmStats, BanditAgent, BanditRng, Pull};
use crate::scoring::argmax_lowest;

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_EPS_DECAY: f64 = 0.99;

/// UCB with `C = 1`: one pull of each arm in index order, then `μ̂ + √(1/n)`.
pub fn ucb_policy(stats: &ArmStats) -> usize {
    if let Some(a) = stats.first_unpulled() {
        return a;
    }
    let scores: Vec<f64> = (0..stats.arms())
        .map(|a| stats.mean(a) + (1.0 / stats.counts[a] as f64).sqrt())
        .collect();
    argmax_lowest(&scores)
}

/// One pull of each arm in index order, then the best empirical mean.
pub fn greedy_arm(stats: &ArmStats) -> usize {
    stats.first_unpulled().unwrap_or_else(|| best_mean(stats))
}

fn best_mean(stats: &ArmStats) -> usize {
    let means: Vec<f64> = (0..stats.arms()).map(|a| stats.mean(a)).collect();
    argmax_lowest(&means)
}

/// Independent Beta posteriors, starting from Beta(1, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaPosteriors {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BetaPosteriors {
    pub fn uniform(k: usize) -> Self {
        Self {
            alpha: vec![1.0; k],
            beta: vec![1.0; k],
        }
    }

    pub fn update(&mut self, arm: usize, reward: f64) {
        if reward > 0.5 {
            self.alpha[arm] += 1.0;
        } else {
            self.beta[arm] += 1.0;
        }
    }
}

/// Draws once from every posterior and returns the largest draw.
pub fn thompson_policy<R: Rng + ?Sized>(post: &BetaPosteriors, rng: &mut R) -> usize {
    let draws: Vec<f64> = post
        .alpha
        .iter()
        .zip(&post.beta)
        .map(|(&a, &b)| {
            Beta::new(a, b)
                .expect("posterior parameters stay positive")
                .sample(rng)
        })
        .collect();
    argmax_lowest(&draws)
}

/// ε-greedy with multiplicative decay after every update. Unpulled arms
/// count as mean 0 unless the optional index-order sweep is enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsGreedy {
    pub epsilon: f64,
    pub decay: f64,
    pub initial_sweep: bool,
}

impl Default for EpsGreedy {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            decay: DEFAULT_EPS_DECAY,
            initial_sweep: false,
        }
    }
}

impl EpsGreedy {
    pub fn select<R: Rng + ?Sized>(&self, stats: &ArmStats, rng: &mut R) -> usize {
        if self.initial_sweep {
            if let Some(a) = stats.first_unpulled() {
                return a;
            }
        }
        // No draw at ε = 0, so the stream matches plain greedy.
        if self.epsilon > 0.0 && rng.random::<f64>() < self.epsilon {
            return rng.random_range(0..stats.arms());
        }
        best_mean(stats)
    }

    pub fn update(&mut self) {
        self.epsilon *= self.decay;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassicalKind {
    Ucb,
    Ts,
    Greedy,
    EpsGreedy,
}

impl ClassicalKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassicalKind::Ucb => "ucb",
            ClassicalKind::Ts => "ts",
            ClassicalKind::Greedy => "greedy",
            ClassicalKind::EpsGreedy => "eps_greedy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassicalAgent {
    Ucb,
    Thompson(BetaPosteriors),
    Greedy,
    EpsGreedy(EpsGreedy),
}

impl ClassicalAgent {
    pub fn new(kind: ClassicalKind, arms: usize) -> Self {
        match kind {
            ClassicalKind::Ucb => ClassicalAgent::Ucb,
            ClassicalKind::Ts => ClassicalAgent::Thompson(BetaPosteriors::uniform(arms)),
            ClassicalKind::Greedy => ClassicalAgent::Greedy,
            ClassicalKind::EpsGreedy => ClassicalAgent::EpsGreedy(EpsGreedy::default()),
        }
    }

    pub fn kind(&self) -> ClassicalKind {
        match self {
            ClassicalAgent::Ucb => ClassicalKind::Ucb,
            ClassicalAgent::Thompson(_) => ClassicalKind::Ts,
            ClassicalAgent::Greedy => ClassicalKind::Greedy,
            ClassicalAgent::EpsGreedy(_) => ClassicalKind::EpsGreedy,
        }
    }
}

impl BanditAgent for ClassicalAgent {
    fn name(&self) -> String {
        self.kind().name().to_string()
    }

    fn select(&mut self, _t: u32, stats: &ArmStats, rng: &mut BanditRng) -> Pull {
        Pull::Arm(match self {
            ClassicalAgent::Ucb => ucb_policy(stats),
            ClassicalAgent::Thompson(post) => thompson_policy(post, rng),
            ClassicalAgent::Greedy => greedy_arm(stats),
            ClassicalAgent::EpsGreedy(eg) => eg.select(stats, rng),
        })
    }

    fn observe(&mut self, arm: usize, reward: f64) {
        match self {
            ClassicalAgent::Thompson(post) => post.update(arm, reward),
            ClassicalAgent::EpsGreedy(eg) => eg.update(),
            _ => {}
        }
    }
}
