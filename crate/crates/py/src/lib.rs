//! Python bindings for the scoring engine, λ schedule, bandit lab and KeyMaze.

use std::path::PathBuf;

use dora_core::bandit::{self, ClassicalAgent, ClassicalKind};
use dora_core::harness::{run_suite, ExperimentConfig};
use dora_core::schedule::{self, LambdaSchedule};
use dora_core::scoring::{self, CandidateAction, ScoreParams};
use dora_core::textenv::{self, TextEnv, WorldDef};
use dora_core::DoraError;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: DoraError) -> PyErr {
    match e {
        DoraError::Contract(_) | DoraError::Config(_) | DoraError::Schema(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn classical_kind(name: &str) -> PyResult<ClassicalKind> {
    match name {
        "ucb" => Ok(ClassicalKind::Ucb),
        "ts" => Ok(ClassicalKind::Ts),
        "greedy" => Ok(ClassicalKind::Greedy),
        "eps_greedy" => Ok(ClassicalKind::EpsGreedy),
        other => Err(PyValueError::new_err(format!(
            "unknown classical agent {other:?}"
        ))),
    }
}

/// Exploration scores for `(text, token_logprobs)` candidates.
#[pyfunction]
#[pyo3(signature = (candidates, alpha = 0.5, epsilon = 1e-8))]
fn score_candidates(
    candidates: Vec<(String, Vec<f64>)>,
    alpha: f64,
    epsilon: f64,
) -> PyResult<Vec<f64>> {
    let params = ScoreParams::new(alpha, epsilon).map_err(py_err)?;
    let cands = candidates
        .into_iter()
        .map(|(t, lps)| CandidateAction::new(t, lps))
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    scoring::score_candidates(&cands, &params).map_err(py_err)
}

#[pyfunction]
fn lambda_probabilities(scores: Vec<f64>, lam: f64) -> PyResult<Vec<f64>> {
    Ok(scoring::lambda_probabilities(&scores, lam)
        .map_err(py_err)?
        .probs)
}

/// Scheduled λ at step `t`.
#[pyfunction]
#[pyo3(signature = (t, lambda_min = 0.0, lambda_max = 40.0, k = 5.0, horizon = 200))]
fn lambda_exp(t: u32, lambda_min: f64, lambda_max: f64, k: f64, horizon: u32) -> PyResult<f64> {
    let sched = LambdaSchedule::new(lambda_min, lambda_max, k, horizon).map_err(py_err)?;
    schedule::lambda_exp(&sched, t).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (raw, lo = 0.0, hi = 40.0, fallback = 20.0))]
fn parse_lambda_reply(raw: &str, lo: f64, hi: f64, fallback: f64) -> f64 {
    schedule::parse_lambda_reply(raw, (lo, hi), fallback)
}

/// Returns `(arm_means, best_arm)`.
#[pyfunction]
#[pyo3(signature = (seed, k = 5, delta = 0.2, horizon = 200))]
fn make_hard_instance(
    seed: u64,
    k: usize,
    delta: f64,
    horizon: u32,
) -> PyResult<(Vec<f64>, usize)> {
    let inst = bandit::make_hard_instance(k, delta, horizon, seed).map_err(py_err)?;
    Ok((inst.arm_means, inst.best_arm))
}

/// One classical-baseline run on the hard instance for `seed`.
#[pyfunction]
#[pyo3(signature = (agent, seed, k = 5, delta = 0.2, horizon = 200))]
fn run_classical<'py>(
    py: Python<'py>,
    agent: &str,
    seed: u64,
    k: usize,
    delta: f64,
    horizon: u32,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = classical_kind(agent)?;
    let inst = bandit::make_hard_instance(k, delta, horizon, seed).map_err(py_err)?;
    let run = bandit::run_bandit(&mut ClassicalAgent::new(kind, k), &inst, seed);
    let m = bandit::compute_metrics(&run, &inst);
    let d = PyDict::new(py);
    d.set_item("mean_avg_reward", m.mean_avg_reward)?;
    d.set_item("cumulative_regret", m.cumulative_regret)?;
    d.set_item("best_arm_fraction", m.best_arm_fraction)?;
    d.set_item("suffix_failure", m.suffix_failure)?;
    d.set_item("pulls", run.pulls)?;
    Ok(d)
}

/// Runs a batch from a JSON config file. Returns `(output_dir, complete)`.
#[pyfunction]
fn run_batch(config: PathBuf) -> PyResult<(PathBuf, bool)> {
    let cfg = ExperimentConfig::load(&config).map_err(py_err)?;
    let out = run_suite(&cfg).map_err(py_err)?;
    Ok((out.output_dir.clone(), out.complete()))
}

#[pyfunction]
fn unique_observations(observations: Vec<String>) -> usize {
    textenv::unique_observations(observations.iter().map(String::as_str))
}

/// `(loops_encountered, loops_recovered, recovery_rate, unique_states)` for
/// a trajectory of `(observation, action)` pairs.
#[pyfunction]
#[pyo3(signature = (pairs, final_observation = None))]
fn loop_stats(
    pairs: Vec<(String, String)>,
    final_observation: Option<String>,
) -> (usize, usize, f64, usize) {
    let refs: Vec<(&str, &str)> = pairs
        .iter()
        .map(|(o, a)| (o.as_str(), a.as_str()))
        .collect();
    let s = textenv::loop_stats_from(&refs, final_observation.as_deref());
    (
        s.loops_encountered,
        s.loops_recovered,
        s.recovery_rate,
        s.unique_states,
    )
}

/// The KeyMaze text world.
#[pyclass(name = "KeyMaze", unsendable)]
struct PyKeyMaze {
    inner: textenv::KeyMaze,
}

#[pymethods]
impl PyKeyMaze {
    #[new]
    #[pyo3(signature = (world = None))]
    fn new(world: Option<PathBuf>) -> PyResult<Self> {
        let def = match world {
            Some(p) => WorldDef::load(&p).map_err(py_err)?,
            None => WorldDef::builtin(),
        };
        Ok(Self {
            inner: textenv::KeyMaze::new(def).map_err(py_err)?,
        })
    }

    #[pyo3(signature = (seed = 0))]
    fn reset(&mut self, seed: u64) -> String {
        self.inner.reset(seed)
    }

    /// Returns `(observation, reward, score, terminal, valid_action)`.
    fn step(&mut self, action: &str) -> PyResult<(String, f64, f64, bool, bool)> {
        let s = self.inner.step(action).map_err(py_err)?;
        Ok((s.observation, s.reward, s.score, s.terminal, s.valid_action))
    }

    #[getter]
    fn room(&self) -> String {
        self.inner.current_room().to_string()
    }

    #[getter]
    fn terminal(&self) -> bool {
        self.inner.is_terminal()
    }
}

#[pymodule]
fn dora_explorer(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(score_candidates, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_exp, m)?)?;
    m.add_function(wrap_pyfunction!(parse_lambda_reply, m)?)?;
    m.add_function(wrap_pyfunction!(make_hard_instance, m)?)?;
    m.add_function(wrap_pyfunction!(run_classical, m)?)?;
    m.add_function(wrap_pyfunction!(run_batch, m)?)?;
    m.add_function(wrap_pyfunction!(unique_observations, m)?)?;
    m.add_function(wrap_pyfunction!(loop_stats, m)?)?;
    m.add_class::<PyKeyMaze>()?;
    Ok(())
}
