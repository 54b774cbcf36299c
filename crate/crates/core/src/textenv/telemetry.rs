//! Exploration telemetry over a finished episode: distinct observations,
//! and (observation, action) loops with three-step recovery.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::agent::{observation_key, EpisodeLog};

/// Steps after a loop event inside which a novel observation counts as recovery.
pub const RECOVERY_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LoopStats {
    pub loops_encountered: usize,
    pub loops_recovered: usize,
    pub recovery_rate: f64,
    pub unique_states: usize,
}

impl LoopStats {
    /// Sums event counts across episodes, then divides.
    pub fn aggregate<'a>(stats: impl IntoIterator<Item = &'a LoopStats>) -> LoopStats {
        let mut total = LoopStats::default();
        for s in stats {
            total.loops_encountered += s.loops_encountered;
            total.loops_recovered += s.loops_recovered;
            total.unique_states += s.unique_states;
        }
        total.recovery_rate = rate(total.loops_recovered, total.loops_encountered);
        total
    }
}

fn rate(recovered: usize, encountered: usize) -> f64 {
    if encountered == 0 {
        0.0
    } else {
        recovered as f64 / encountered as f64
    }
}

pub fn unique_observations<'a>(observations: impl IntoIterator<Item = &'a str>) -> usize {
    observations
        .into_iter()
        .map(observation_key)
        .collect::<HashSet<_>>()
        .len()
}

/// Distinct observations at which the episode acted.
pub fn unique_states(episode: &EpisodeLog) -> usize {
    unique_observations(episode.observations())
}

/// Loop events over aligned `(o_t, a_t)` pairs; `final_observation` is the
/// observation that followed the last action, if any.
///
/// A loop event at `t` is a pair seen at an earlier step. It is recovered
/// when one of `o_{t+1}..o_{t+3}` is absent from `o_0..o_t`.
pub fn loop_stats_from(pairs: &[(&str, &str)], final_observation: Option<&str>) -> LoopStats {
    let mut observations: Vec<&str> = pairs.iter().map(|(o, _)| observation_key(o)).collect();
    if let Some(last) = final_observation {
        observations.push(observation_key(last));
    }

    let mut seen_pairs = HashSet::new();
    let mut seen_obs = HashSet::new();
    let mut stats = LoopStats {
        unique_states: unique_observations(pairs.iter().map(|(o, _)| *o)),
        ..LoopStats::default()
    };
    for (t, (obs, action)) in pairs.iter().enumerate() {
        let key = observation_key(obs);
        seen_obs.insert(key);
        if !seen_pairs.insert((key, *action)) {
            stats.loops_encountered += 1;
            let window = observations.iter().skip(t + 1).take(RECOVERY_WINDOW);
            if window.into_iter().any(|o| !seen_obs.contains(o)) {
                stats.loops_recovered += 1;
            }
        }
    }
    stats.recovery_rate = rate(stats.loops_recovered, stats.loops_encountered);
    stats
}

pub fn loop_stats(episode: &EpisodeLog) -> LoopStats {
    let pairs = episode.pairs();
    let last = (!episode.steps.is_empty()).then(|| episode.final_observation());
    loop_stats_from(&pairs, last)
}
