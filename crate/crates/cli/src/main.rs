//! `dora`: run bandit and KeyMaze batches, and turn run logs into tables.
//!
//! Exit codes: 0 success, 1 config error, 2 backend error, 3 partial batch.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dora_core::harness::{
    report, run_suite, AgentKind, BackendSpec, ExperimentConfig, Overrides, Suite, SuiteOutcome,
};
use dora_core::DoraError;

#[derive(Parser, Debug)]
#[command(
    name = "dora",
    version,
    about = "Sequence-level exploration experiments"
)]
struct Cli {
    /// Policy backend: `mock:<script.json>` or `remote` (reads DORA_API_BASE, DORA_API_KEY, DORA_MODEL).
    #[arg(long, global = true, value_parser = parse_backend)]
    backend: Option<BackendSpec>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Multi-armed bandit batches.
    Bandit {
        #[command(subcommand)]
        action: RunAction,
    },
    /// KeyMaze text-world batches.
    Keymaze {
        #[command(subcommand)]
        action: RunAction,
    },
    /// Summary tables and plot series from a directory of run logs.
    Report {
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
        #[arg(long = "out", value_name = "DIR")]
        output: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum RunAction {
    Run(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment config (JSON). Built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_agent)]
    agent: Option<AgentKind>,
    #[arg(long)]
    runs: Option<usize>,
    /// Master seed; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_backend(s: &str) -> Result<BackendSpec, String> {
    s.parse().map_err(|e: DoraError| e.to_string())
}

fn parse_agent(s: &str) -> Result<AgentKind, String> {
    s.parse().map_err(|e: DoraError| e.to_string())
}

fn exit_code(err: &DoraError) -> u8 {
    match err {
        DoraError::Backend(_) => 2,
        _ => 1,
    }
}

fn load_config(
    suite: Suite,
    args: RunArgs,
    backend: Option<BackendSpec>,
) -> Result<ExperimentConfig, DoraError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if args.config.is_some() && cfg.suite != suite {
        return Err(DoraError::Config(format!(
            "config describes a {} suite, not {}",
            cfg.suite.name(),
            suite.name()
        )));
    }
    cfg.apply(Overrides {
        suite: Some(suite),
        agent: args.agent,
        runs: args.runs,
        master_seed: args.seed,
        backend,
        output_dir: args.out,
        workers: args.workers,
    });
    Ok(cfg)
}

fn print_outcome(outcome: &SuiteOutcome) {
    if let Some(s) = &outcome.bandit_summary {
        println!(
            "{}: runs={} mean_avg_reward={:.4} cum_regret={:.3} suffix_fail_freq={:.3} best_arm_frac={:.3} invalid={}",
            s.agent, s.runs, s.mean_avg_reward, s.cum_regret, s.suffix_fail_freq, s.best_arm_frac, s.invalid_count
        );
    }
    if let Some(s) = &outcome.keymaze_summary {
        println!(
            "{}: runs={} mean_score={:.3} success_rate={:.3} unique_states={:.2} loops={} recovered={} invalid={}",
            s.agent,
            s.runs,
            s.mean_score,
            s.success_rate,
            s.mean_unique_states,
            s.loops_encountered,
            s.loops_recovered,
            s.invalid_count
        );
    }
    println!("artifacts in {}", outcome.output_dir.display());
}

fn run(cli: Cli) -> Result<u8, DoraError> {
    let (suite, args) = match cli.command {
        Command::Report { input, output } => {
            let files = report(&input, &output)?;
            for f in files.files {
                println!("{}", f.display());
            }
            return Ok(0);
        }
        Command::Bandit {
            action: RunAction::Run(args),
        } => (Suite::Bandit, args),
        Command::Keymaze {
            action: RunAction::Run(args),
        } => (Suite::Keymaze, args),
    };
    let cfg = load_config(suite, args, cli.backend)?;
    let outcome = run_suite(&cfg)?;
    print_outcome(&outcome);
    if outcome.complete() {
        return Ok(0);
    }
    for (run, err) in &outcome.failures {
        eprintln!("run {run} failed: {err}");
    }
    if outcome.failures.len() == outcome.runs {
        eprintln!("every run failed");
        Ok(2)
    } else {
        eprintln!(
            "{} of {} runs failed; summary is partial",
            outcome.failures.len(),
            outcome.runs
        );
        Ok(3)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
