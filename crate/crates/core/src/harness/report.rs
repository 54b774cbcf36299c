//! Tables and plot series from a directory of run logs.
//!
//! Bandit suites produce `metrics_table.csv`, `selections.csv` (cumulative
//! pulls per arm at each step), `best_arm_fraction.csv` and
//! `best_arm_fraction_mean.csv`. KeyMaze suites produce `metrics_table.csv`
//! and `loops.csv`. Nothing is written unless every log reads cleanly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::fmt_sig;
use super::records::{
    read_run_log, KeymazeMetrics, KeymazeSummary, LogLine, RunLog, RunMetrics, RunStatus,
};
use super::suite::{is_run_log, BANDIT_SUMMARY_COLUMNS, KEYMAZE_SUMMARY_COLUMNS};
use crate::bandit::{BanditMetrics, BanditSummary, COLORS};
use crate::error::{DoraError, Result};
use crate::textenv::loop_stats_from;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub files: Vec<PathBuf>,
}

type Table = (String, Vec<Vec<String>>);

pub fn report(input_dir: &Path, output_dir: &Path) -> Result<ReportFiles> {
    let mut paths: Vec<PathBuf> = fs::read_dir(input_dir)
        .map_err(|e| DoraError::Config(format!("input directory {}: {e}", input_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_run_log(p))
        .collect();
    if paths.is_empty() {
        return Err(DoraError::Config(format!(
            "no run logs (run_*.jsonl) in {}",
            input_dir.display()
        )));
    }
    paths.sort();
    let logs = paths
        .iter()
        .map(|p| read_run_log(p))
        .collect::<Result<Vec<_>>>()?;

    let suite = logs[0].suite().to_string();
    if let Some(other) = logs.iter().find(|l| l.suite() != suite) {
        return Err(DoraError::Schema(format!(
            "mixed suites in {}: {suite} and {}",
            input_dir.display(),
            other.suite()
        )));
    }
    let tables = match suite.as_str() {
        "bandit" => bandit_tables(&logs)?,
        "keymaze" => keymaze_tables(&logs)?,
        other => return Err(DoraError::Schema(format!("unknown suite {other:?}"))),
    };

    fs::create_dir_all(output_dir)?;
    let mut files = Vec::new();
    for (name, rows) in tables {
        let path = output_dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        files.push(path);
    }
    Ok(ReportFiles { files })
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

fn by_agent(logs: &[RunLog]) -> BTreeMap<&str, Vec<&RunLog>> {
    let mut map: BTreeMap<&str, Vec<&RunLog>> = BTreeMap::new();
    for l in logs {
        map.entry(l.agent()).or_default().push(l);
    }
    map
}

fn ok_metrics(log: &RunLog) -> Option<&RunMetrics> {
    match &log.metrics {
        Some(LogLine::Metrics {
            status: RunStatus::Ok,
            metrics,
            ..
        }) => Some(metrics),
        _ => None,
    }
}

fn bandit_tables(logs: &[RunLog]) -> Result<Vec<Table>> {
    let mut table = vec![header(&BANDIT_SUMMARY_COLUMNS)];
    for (agent, runs) in by_agent(logs) {
        let metrics: Vec<BanditMetrics> = runs
            .iter()
            .filter_map(|l| match ok_metrics(l) {
                Some(RunMetrics::Bandit { metrics, .. }) => Some(metrics.clone()),
                _ => None,
            })
            .collect();
        let s = BanditSummary::from_metrics(agent, &metrics, runs.len());
        table.push(vec![
            s.agent,
            fmt_sig(s.mean_avg_reward),
            fmt_sig(s.suffix_fail_freq),
            fmt_sig(s.best_arm_frac),
            fmt_sig(s.cum_regret),
            s.invalid_count.to_string(),
            s.runs.to_string(),
            s.complete.to_string(),
        ]);
    }

    let arms = logs
        .iter()
        .map(|l| match &l.header {
            LogLine::Header {
                instance: Some(i), ..
            } => Ok(i.arms()),
            _ => Err(DoraError::Schema(format!(
                "bandit run {} has no instance",
                l.run()
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    let max_arms = arms.iter().copied().max().unwrap_or(0);
    let arm_name = |a: usize| {
        COLORS
            .get(a)
            .map_or_else(|| format!("arm_{a}"), |c| c.to_string())
    };

    let mut sel_header = vec!["run".to_string(), "t".to_string()];
    sel_header.extend((0..max_arms).map(arm_name));
    sel_header.push("invalid".into());
    let mut selections = vec![sel_header];
    let mut fraction = vec![header(&["run", "t", "best_arm_fraction"])];
    let mut mean_curves: BTreeMap<&str, Vec<(f64, usize)>> = BTreeMap::new();

    for log in logs {
        let LogLine::Header {
            instance: Some(inst),
            agent,
            ..
        } = &log.header
        else {
            unreachable!("checked above")
        };
        let mut counts = vec![0u64; max_arms];
        let mut invalid = 0u64;
        let mut best = 0u64;
        let curve = mean_curves.entry(agent.as_str()).or_default();
        for (i, step) in log.steps.iter().enumerate() {
            let LogLine::BanditStep { arm, .. } = step else {
                return Err(DoraError::Schema(format!(
                    "run {}: non-bandit step line",
                    log.run()
                )));
            };
            match arm {
                Some(a) if *a < max_arms => {
                    counts[*a] += 1;
                    if *a == inst.best_arm {
                        best += 1;
                    }
                }
                Some(a) => {
                    return Err(DoraError::Schema(format!(
                        "run {}: arm {a} out of range",
                        log.run()
                    )))
                }
                None => invalid += 1,
            }
            let t = i + 1;
            let mut row = vec![log.run().to_string(), t.to_string()];
            row.extend(counts.iter().map(u64::to_string));
            row.push(invalid.to_string());
            selections.push(row);
            let frac = best as f64 / t as f64;
            fraction.push(vec![log.run().to_string(), t.to_string(), fmt_sig(frac)]);
            if curve.len() < t {
                curve.push((0.0, 0));
            }
            curve[i].0 += frac;
            curve[i].1 += 1;
        }
    }

    let mut mean = vec![header(&["agent", "t", "mean_best_arm_fraction"])];
    for (agent, curve) in mean_curves {
        for (i, (sum, n)) in curve.iter().enumerate() {
            mean.push(vec![
                agent.to_string(),
                (i + 1).to_string(),
                fmt_sig(sum / *n as f64),
            ]);
        }
    }

    Ok(vec![
        ("metrics_table.csv".into(), table),
        ("selections.csv".into(), selections),
        ("best_arm_fraction.csv".into(), fraction),
        ("best_arm_fraction_mean.csv".into(), mean),
    ])
}

fn keymaze_tables(logs: &[RunLog]) -> Result<Vec<Table>> {
    let mut table = vec![header(&KEYMAZE_SUMMARY_COLUMNS)];
    for (agent, runs) in by_agent(logs) {
        let metrics: Vec<KeymazeMetrics> = runs
            .iter()
            .filter_map(|l| match ok_metrics(l) {
                Some(RunMetrics::Keymaze(m)) => Some(m.clone()),
                _ => None,
            })
            .collect();
        let s = KeymazeSummary::from_metrics(agent, &metrics, runs.len());
        table.push(vec![
            s.agent,
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
        ]);
    }

    let mut loops = vec![header(&[
        "run",
        "agent",
        "steps",
        "unique_states",
        "loops_encountered",
        "loops_recovered",
        "recovery_rate",
        "final_score",
    ])];
    for log in logs {
        let mut pairs = Vec::new();
        let mut last_obs = None;
        let mut score = 0.0;
        for step in &log.steps {
            let LogLine::TextStep {
                record,
                next_observation,
                score: s,
                ..
            } = step
            else {
                return Err(DoraError::Schema(format!(
                    "run {}: non-text step line",
                    log.run()
                )));
            };
            pairs.push((record.observation.as_str(), record.chosen_action.as_str()));
            last_obs = Some(next_observation.as_str());
            score = *s;
        }
        let stats = loop_stats_from(&pairs, last_obs);
        loops.push(vec![
            log.run().to_string(),
            log.agent().to_string(),
            pairs.len().to_string(),
            stats.unique_states.to_string(),
            stats.loops_encountered.to_string(),
            stats.loops_recovered.to_string(),
            fmt_sig(stats.recovery_rate),
            fmt_sig(score),
        ]);
    }
    Ok(vec![
        ("metrics_table.csv".into(), table),
        ("loops.csv".into(), loops),
    ])
}
