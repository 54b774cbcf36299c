//! Batch runner and artifact writer.
//!
//! A suite writes into its output directory:
//!
//! * `run_NNNN.jsonl`, one per run: a header line, one line per step, a metrics line
//! * `metrics.jsonl`, the metrics line of every run
//! * `summary.csv`, one aggregate row
//! * `config.json`, the resolved configuration
//!
//! Every JSONL line carries `schema_version`.

mod config;
mod records;
mod report;
mod suite;

pub use config::{
    AgentKind, BackendFactory, BackendSpec, BanditConfig, DoraConfig, ExperimentConfig,
    KeymazeConfig, Overrides, Suite,
};
pub use records::{
    read_run_log, KeymazeMetrics, KeymazeSummary, LogLine, RunLog, RunMetrics, RunStatus,
    SCHEMA_VERSION,
};
pub use report::{report, ReportFiles};
pub use suite::{run_suite, SuiteOutcome};

/// Formats `x` with 6 significant digits, trailing zeros dropped.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x == 0.0 {
            "0".into()
        } else {
            x.to_string()
        };
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = 5 - magnitude;
    let s = if decimals >= 0 {
        format!("{:.*}", decimals as usize, x)
    } else {
        let scale = 10f64.powi(-decimals);
        format!("{:.0}", (x / scale).round() * scale)
    };
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}
