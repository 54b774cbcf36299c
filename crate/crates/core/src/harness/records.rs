//! JSONL line types and their reader.

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::StepRecord;
use crate::bandit::{BanditInstance, BanditMetrics};
use crate::error::{DoraError, Result};
use crate::textenv::LoopStats;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeymazeMetrics {
    pub total_reward: f64,
    pub final_score: f64,
    pub terminal: bool,
    pub steps: usize,
    pub loops: LoopStats,
    pub invalid_actions: usize,
    pub backend_errors: usize,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "suite", rename_all = "snake_case")]
pub enum RunMetrics {
    Bandit {
        #[serde(flatten)]
        metrics: BanditMetrics,
        backend_errors: usize,
    },
    Keymaze(KeymazeMetrics),
}

/// One line of a run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Header {
        schema_version: u32,
        suite: String,
        agent: String,
        run: usize,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        instance: Option<BanditInstance>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        world: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial_observation: Option<String>,
    },
    BanditStep {
        schema_version: u32,
        t: u32,
        /// `None` for an invalid step.
        arm: Option<usize>,
        reward: u8,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        record: Option<StepRecord>,
    },
    TextStep {
        schema_version: u32,
        t: u32,
        reward: f64,
        score: f64,
        terminal: bool,
        valid_action: bool,
        next_observation: String,
        record: StepRecord,
    },
    Metrics {
        schema_version: u32,
        run: usize,
        seed: u64,
        #[serde(flatten)]
        status: RunStatus,
        metrics: RunMetrics,
    },
}

impl LogLine {
    pub fn schema_version(&self) -> u32 {
        match self {
            LogLine::Header { schema_version, .. }
            | LogLine::BanditStep { schema_version, .. }
            | LogLine::TextStep { schema_version, .. }
            | LogLine::Metrics { schema_version, .. } => *schema_version,
        }
    }
}

/// A run log split into its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: LogLine,
    pub steps: Vec<LogLine>,
    pub metrics: Option<LogLine>,
}

impl RunLog {
    pub fn suite(&self) -> &str {
        match &self.header {
            LogLine::Header { suite, .. } => suite,
            _ => unreachable!("header checked on read"),
        }
    }

    pub fn agent(&self) -> &str {
        match &self.header {
            LogLine::Header { agent, .. } => agent,
            _ => unreachable!("header checked on read"),
        }
    }

    pub fn run(&self) -> usize {
        match &self.header {
            LogLine::Header { run, .. } => *run,
            _ => unreachable!("header checked on read"),
        }
    }
}

/// Reads a run log, rejecting any line whose `schema_version` differs from
/// [`SCHEMA_VERSION`].
pub fn read_run_log(path: &Path) -> Result<RunLog> {
    let file = std::fs::File::open(path)?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let where_ = || format!("{}:{}", path.display(), i + 1);
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| DoraError::Schema(format!("{}: {e}", where_())))?;
        match value.get("schema_version").and_then(Value::as_u64) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(DoraError::Schema(format!(
                    "{}: schema_version {v}, expected {SCHEMA_VERSION}",
                    where_()
                )))
            }
            None => {
                return Err(DoraError::Schema(format!(
                    "{}: missing schema_version",
                    where_()
                )))
            }
        }
        let parsed: LogLine = serde_json::from_value(value)
            .map_err(|e| DoraError::Schema(format!("{}: {e}", where_())))?;
        lines.push(parsed);
    }
    let mut iter = lines.into_iter();
    let header = match iter.next() {
        Some(h @ LogLine::Header { .. }) => h,
        _ => {
            return Err(DoraError::Schema(format!(
                "{}: first line must be a header",
                path.display()
            )))
        }
    };
    let mut steps = Vec::new();
    let mut metrics = None;
    for line in iter {
        match line {
            LogLine::Metrics { .. } => metrics = Some(line),
            LogLine::Header { .. } => {
                return Err(DoraError::Schema(format!(
                    "{}: repeated header",
                    path.display()
                )))
            }
            step => steps.push(step),
        }
    }
    Ok(RunLog {
        header,
        steps,
        metrics,
    })
}

/// Aggregate row for a KeyMaze batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeymazeSummary {
    pub agent: String,
    pub mean_score: f64,
    pub mean_reward: f64,
    pub success_rate: f64,
    pub mean_unique_states: f64,
    pub loops_encountered: usize,
    pub loops_recovered: usize,
    pub recovery_rate: f64,
    pub invalid_count: usize,
    pub runs: usize,
    pub complete: bool,
}

impl KeymazeSummary {
    pub fn from_metrics(
        agent: impl Into<String>,
        metrics: &[KeymazeMetrics],
        expected_runs: usize,
    ) -> Self {
        let n = metrics.len().max(1) as f64;
        let loops = LoopStats::aggregate(metrics.iter().map(|m| &m.loops));
        Self {
            agent: agent.into(),
            mean_score: metrics.iter().map(|m| m.final_score).sum::<f64>() / n,
            mean_reward: metrics.iter().map(|m| m.total_reward).sum::<f64>() / n,
            success_rate: metrics.iter().filter(|m| m.terminal).count() as f64 / n,
            mean_unique_states: loops.unique_states as f64 / n,
            loops_encountered: loops.loops_encountered,
            loops_recovered: loops.loops_recovered,
            recovery_rate: loops.recovery_rate,
            invalid_count: metrics.iter().map(|m| m.invalid_actions).sum(),
            runs: metrics.len(),
            complete: metrics.len() == expected_runs,
        }
    }
}
