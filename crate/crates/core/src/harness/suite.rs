use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use super::config::{AgentKind, BackendFactory, ExperimentConfig, Suite};
use super::fmt_sig;
use super::records::{
    KeymazeMetrics, KeymazeSummary, LogLine, RunMetrics, RunStatus, SCHEMA_VERSION,
};
use crate::agent::{run_episode, DoraAgent};
use crate::bandit::{
    compute_metrics, make_hard_instance, run_bandit, run_rng, BanditAgent, BanditSummary,
    ClassicalAgent, ClassicalKind, DoraBanditAgent, LlmTemperatureAgent,
};
use crate::error::{DoraError, Result};
use crate::policy::PromptKind;
use crate::prompts::Prompts;
use crate::textenv::{loop_stats, KeyMaze, WorldDef};

pub const BANDIT_SUMMARY_COLUMNS: [&str; 8] = [
    "agent",
    "mean_avg_reward",
    "suffix_fail_freq",
    "best_arm_frac",
    "cum_regret",
    "invalid_count",
    "runs",
    "complete",
];

pub const KEYMAZE_SUMMARY_COLUMNS: [&str; 11] = [
    "agent",
    "mean_score",
    "mean_reward",
    "success_rate",
    "mean_unique_states",
    "loops_encountered",
    "loops_recovered",
    "recovery_rate",
    "invalid_count",
    "runs",
    "complete",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub output_dir: PathBuf,
    pub runs: usize,
    /// `(run index, error)` for every run that did not finish cleanly.
    pub failures: Vec<(usize, String)>,
    pub bandit_summary: Option<BanditSummary>,
    pub keymaze_summary: Option<KeymazeSummary>,
}

impl SuiteOutcome {
    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }
}

struct Shared {
    prompts: Arc<Prompts>,
    backend: Option<BackendFactory>,
    world: Option<WorldDef>,
}

/// Executes every run of `config` and writes the artifacts. Runs whose
/// backend failed are logged in full but left out of the summary row, which
/// is then marked incomplete.
pub fn run_suite(config: &ExperimentConfig) -> Result<SuiteOutcome> {
    config.validate()?;
    let shared = Shared {
        prompts: config.load_prompts()?,
        backend: match (&config.backend, config.agent.needs_backend()) {
            (Some(spec), true) => Some(BackendFactory::from_spec(spec)?),
            _ => None,
        },
        world: match config.suite {
            Suite::Keymaze => Some(config.load_world()?),
            Suite::Bandit => None,
        },
    };

    let out = &config.output_dir;
    fs::create_dir_all(out)?;
    clear_run_logs(out)?;

    let workers = config
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| DoraError::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<LogLine>> = pool.install(|| {
        (0..config.runs)
            .into_par_iter()
            .map(|i| execute_run(config, &shared, i))
            .collect()
    });

    let mut metrics_lines = Vec::with_capacity(results.len());
    for r in results {
        metrics_lines.push(r?);
    }

    let mut failures = Vec::new();
    let mut bandit = Vec::new();
    let mut keymaze = Vec::new();
    let mut writer = BufWriter::new(fs::File::create(out.join("metrics.jsonl"))?);
    for line in &metrics_lines {
        write_line(&mut writer, line)?;
        if let LogLine::Metrics {
            run,
            status,
            metrics,
            ..
        } = line
        {
            match status {
                RunStatus::Failed { error } => failures.push((*run, error.clone())),
                RunStatus::Ok => match metrics {
                    RunMetrics::Bandit { metrics, .. } => bandit.push(metrics.clone()),
                    RunMetrics::Keymaze(m) => keymaze.push(m.clone()),
                },
            }
        }
    }
    writer.flush()?;

    let mut outcome = SuiteOutcome {
        output_dir: out.clone(),
        runs: config.runs,
        failures,
        bandit_summary: None,
        keymaze_summary: None,
    };
    match config.suite {
        Suite::Bandit => {
            let s = BanditSummary::from_metrics(config.agent.name(), &bandit, config.runs);
            write_bandit_summary(&out.join("summary.csv"), std::slice::from_ref(&s))?;
            outcome.bandit_summary = Some(s);
        }
        Suite::Keymaze => {
            let s = KeymazeSummary::from_metrics(config.agent.name(), &keymaze, config.runs);
            write_keymaze_summary(&out.join("summary.csv"), std::slice::from_ref(&s))?;
            outcome.keymaze_summary = Some(s);
        }
    }
    fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(config)? + "\n",
    )?;
    Ok(outcome)
}

pub(crate) fn run_log_name(run: usize) -> String {
    format!("run_{run:04}.jsonl")
}

pub(crate) fn is_run_log(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with("run_") && n.ends_with(".jsonl"))
}

/// Removes run logs left by an earlier batch in the same directory.
fn clear_run_logs(dir: &Path) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && is_run_log(&path) {
            fs::remove_file(path)?;
        }
    }
    Ok(())
}

fn write_line<W: Write>(w: &mut W, line: &LogLine) -> Result<()> {
    serde_json::to_writer(&mut *w, line)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn execute_run(config: &ExperimentConfig, shared: &Shared, run: usize) -> Result<LogLine> {
    let path = config.output_dir.join(run_log_name(run));
    let mut w = BufWriter::new(fs::File::create(&path)?);
    let metrics = match config.suite {
        Suite::Bandit => bandit_run(config, shared, run, &mut w)?,
        Suite::Keymaze => keymaze_run(config, shared, run, &mut w)?,
    };
    write_line(&mut w, &metrics)?;
    w.flush()?;
    Ok(metrics)
}

fn bandit_agent(config: &ExperimentConfig, shared: &Shared) -> Result<Box<dyn BanditAgent>> {
    let b = &config.bandit;
    let classical = |k| Ok(Box::new(ClassicalAgent::new(k, b.arms)) as Box<dyn BanditAgent>);
    let backend = || -> Result<_> {
        shared
            .backend
            .as_ref()
            .ok_or_else(|| DoraError::Config(format!("agent {} needs a backend", config.agent)))?
            .make()
    };
    match config.agent {
        AgentKind::Ucb => classical(ClassicalKind::Ucb),
        AgentKind::Ts => classical(ClassicalKind::Ts),
        AgentKind::Greedy => classical(ClassicalKind::Greedy),
        AgentKind::EpsGreedy => classical(ClassicalKind::EpsGreedy),
        AgentKind::LlmTemp => Ok(Box::new(LlmTemperatureAgent::new(
            backend()?,
            shared.prompts.clone(),
            b.temperature,
            b.arms,
            b.horizon,
        )?)),
        AgentKind::DoraScheduled | AgentKind::DoraAuto => Ok(Box::new(DoraBanditAgent::new(
            backend()?,
            shared.prompts.clone(),
            config.dora.lambda_source(config.agent, b.horizon)?,
            config.dora.params(PromptKind::MabAnswer),
            b.scorer,
            b.arms,
            b.horizon,
        )?)),
    }
}

fn bandit_run<W: Write>(
    config: &ExperimentConfig,
    shared: &Shared,
    run: usize,
    w: &mut W,
) -> Result<LogLine> {
    let seed = config.run_seed(run);
    let b = &config.bandit;
    let instance = make_hard_instance(b.arms, b.gap, b.horizon, seed)?;
    let mut agent = bandit_agent(config, shared)?;
    let result = run_bandit(&mut agent, &instance, seed);

    write_line(
        w,
        &LogLine::Header {
            schema_version: SCHEMA_VERSION,
            suite: Suite::Bandit.name().into(),
            agent: config.agent.name().into(),
            run,
            seed,
            instance: Some(instance.clone()),
            world: None,
            initial_observation: None,
        },
    )?;
    let mut records = result.records.iter();
    for (t, (arm, reward)) in result.pulls.iter().zip(&result.rewards).enumerate() {
        write_line(
            w,
            &LogLine::BanditStep {
                schema_version: SCHEMA_VERSION,
                t: t as u32,
                arm: *arm,
                reward: *reward,
                record: records.next().cloned(),
            },
        )?;
    }

    let status = match result.records.iter().find(|r| r.is_backend_error()) {
        Some(r) => RunStatus::Failed {
            error: format!(
                "{} backend error(s); first at step {}: {}",
                result.backend_errors,
                r.step,
                r.error.as_deref().unwrap_or("unknown")
            ),
        },
        None => RunStatus::Ok,
    };
    Ok(LogLine::Metrics {
        schema_version: SCHEMA_VERSION,
        run,
        seed,
        status,
        metrics: RunMetrics::Bandit {
            metrics: compute_metrics(&result, &instance),
            backend_errors: result.backend_errors,
        },
    })
}

fn keymaze_run<W: Write>(
    config: &ExperimentConfig,
    shared: &Shared,
    run: usize,
    w: &mut W,
) -> Result<LogLine> {
    let seed = config.run_seed(run);
    let world = shared
        .world
        .clone()
        .expect("world loaded for keymaze suites");
    let world_name = world.name.clone();
    let backend = shared
        .backend
        .as_ref()
        .ok_or_else(|| DoraError::Config(format!("agent {} needs a backend", config.agent)))?
        .make()?;
    let mut agent = DoraAgent::new(
        backend,
        shared.prompts.clone(),
        config
            .dora
            .lambda_source(config.agent, config.keymaze.max_steps)?,
        config.dora.params(PromptKind::GreedyAction),
    )?;
    let mut env = KeyMaze::new(world)?;
    let mut rng = run_rng(seed);
    let log = run_episode(
        &mut agent,
        &mut env,
        seed,
        config.keymaze.max_steps,
        &mut rng,
    )?;

    write_line(
        w,
        &LogLine::Header {
            schema_version: SCHEMA_VERSION,
            suite: Suite::Keymaze.name().into(),
            agent: config.agent.name().into(),
            run,
            seed,
            instance: None,
            world: Some(world_name),
            initial_observation: Some(log.initial_observation.clone()),
        },
    )?;
    for (t, step) in log.steps.iter().enumerate() {
        write_line(
            w,
            &LogLine::TextStep {
                schema_version: SCHEMA_VERSION,
                t: t as u32,
                reward: step.reward,
                score: step.score,
                terminal: step.terminal,
                valid_action: step.valid_action,
                next_observation: step.next_observation.clone(),
                record: step.record.clone(),
            },
        )?;
    }

    let backend_errors = log.backend_errors();
    let status = if let Some(e) = &log.aborted {
        RunStatus::Failed {
            error: format!("environment aborted: {e}"),
        }
    } else if backend_errors > 0 {
        let first = log
            .steps
            .iter()
            .find(|s| s.record.is_backend_error())
            .expect("counted above");
        RunStatus::Failed {
            error: format!(
                "{backend_errors} backend error(s); first at step {}: {}",
                first.record.step,
                first.record.error.as_deref().unwrap_or("unknown")
            ),
        }
    } else {
        RunStatus::Ok
    };
    Ok(LogLine::Metrics {
        schema_version: SCHEMA_VERSION,
        run,
        seed,
        status,
        metrics: RunMetrics::Keymaze(KeymazeMetrics {
            total_reward: log.total_reward,
            final_score: log.final_score,
            terminal: log.terminal,
            steps: log.steps.len(),
            loops: loop_stats(&log),
            invalid_actions: log.invalid_actions(),
            backend_errors,
            total_tokens: log.total_tokens,
        }),
    })
}

pub(crate) fn write_bandit_summary(path: &Path, rows: &[BanditSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(BANDIT_SUMMARY_COLUMNS)?;
    for s in rows {
        w.write_record([
            s.agent.clone(),
            fmt_sig(s.mean_avg_reward),
            fmt_sig(s.suffix_fail_freq),
            fmt_sig(s.best_arm_frac),
            fmt_sig(s.cum_regret),
            s.invalid_count.to_string(),
            s.runs.to_string(),
            s.complete.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_keymaze_summary(path: &Path, rows: &[KeymazeSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(KEYMAZE_SUMMARY_COLUMNS)?;
    for s in rows {
        w.write_record([
            s.agent.clone(),
            fmt_sig(s.mean_score),
            fmt_sig(s.mean_reward),
            fmt_sig(s.success_rate),
            fmt_sig(s.mean_unique_states),
            s.loops_encountered.to_string(),
            s.loops_recovered.to_string(),
            fmt_sig(s.recovery_rate),
            s.invalid_count.to_string(),
            s.runs.to_string(),
            s.complete.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
