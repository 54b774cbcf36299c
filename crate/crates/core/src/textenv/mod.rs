//! Episodic text environments and exploration telemetry.

mod keymaze;
mod telemetry;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use keymaze::{DoorDef, KeyMaze, ObjectDef, ObjectKind, RewardDef, RoomDef, WorldDef};
pub use telemetry::{loop_stats, loop_stats_from, unique_observations, unique_states, LoopStats};

/// Default step budget for text episodes.
pub const DEFAULT_TEXT_HORIZON: u32 = 100;

/// Reply to an unrecognized command.
pub const NOTHING_HAPPENS: &str = "Nothing happens.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEnvStep {
    pub observation: String,
    pub reward: f64,
    /// Cumulative score normalized to `[0, 1]`.
    pub score: f64,
    pub terminal: bool,
    pub valid_action: bool,
}

/// A partially observable text world: observations in, action strings out.
pub trait TextEnv {
    /// Starts a fresh episode and returns the first observation.
    fn reset(&mut self, seed: u64) -> String;

    /// Applies a normalized action. Stepping a finished episode is an error.
    fn step(&mut self, action: &str) -> Result<TextEnvStep>;
}
