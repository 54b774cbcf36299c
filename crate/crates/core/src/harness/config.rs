//! Experiment configuration. One JSON document per experiment; every field
//! has a default, and relative paths resolve against the file's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::agent::{DoraParams, DEFAULT_HISTORY_WINDOW};
use crate::bandit::{
    BanditScorer, TemperatureSchedule, DEFAULT_ARMS, DEFAULT_GAP, DEFAULT_HORIZON,
};
use crate::error::{DoraError, Result};
use crate::policy::{
    LogprobAcquisition, MockPolicy, MockScript, PolicyBackend, PromptKind, RemoteBackend,
    DEFAULT_N_CANDIDATES, DEFAULT_TAU_CANDIDATES, DEFAULT_TAU_DECISION, DEFAULT_TAU_LAMBDA,
};
use crate::prompts::Prompts;
use crate::schedule::{
    LambdaSchedule, LambdaSource, DEFAULT_GROWTH, DEFAULT_LAMBDA_MAX, DEFAULT_LAMBDA_MIN,
};
use crate::scoring::ScoreParams;
use crate::textenv::{WorldDef, DEFAULT_TEXT_HORIZON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    #[default]
    Bandit,
    Keymaze,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Bandit => "bandit",
            Suite::Keymaze => "keymaze",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    #[default]
    Ucb,
    Ts,
    Greedy,
    EpsGreedy,
    LlmTemp,
    DoraScheduled,
    DoraAuto,
}

impl AgentKind {
    pub const ALL: [AgentKind; 7] = [
        AgentKind::Ucb,
        AgentKind::Ts,
        AgentKind::Greedy,
        AgentKind::EpsGreedy,
        AgentKind::LlmTemp,
        AgentKind::DoraScheduled,
        AgentKind::DoraAuto,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Ucb => "ucb",
            AgentKind::Ts => "ts",
            AgentKind::Greedy => "greedy",
            AgentKind::EpsGreedy => "eps_greedy",
            AgentKind::LlmTemp => "llm_temp",
            AgentKind::DoraScheduled => "dora_scheduled",
            AgentKind::DoraAuto => "dora_auto",
        }
    }

    pub fn needs_backend(self) -> bool {
        matches!(
            self,
            AgentKind::LlmTemp | AgentKind::DoraScheduled | AgentKind::DoraAuto
        )
    }

    pub fn is_dora(self) -> bool {
        matches!(self, AgentKind::DoraScheduled | AgentKind::DoraAuto)
    }
}

impl FromStr for AgentKind {
    type Err = DoraError;

    fn from_str(s: &str) -> Result<Self> {
        AgentKind::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = AgentKind::ALL.iter().map(|a| a.name()).collect();
                DoraError::Config(format!(
                    "unknown agent {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `mock:<script.json>` or `remote`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Mock(PathBuf),
    Remote,
}

impl FromStr for BackendSpec {
    type Err = DoraError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "remote" => Ok(BackendSpec::Remote),
            _ => match s.strip_prefix("mock:") {
                Some(path) if !path.is_empty() => Ok(BackendSpec::Mock(PathBuf::from(path))),
                _ => Err(DoraError::Config(format!(
                    "backend {s:?} must be \"remote\" or \"mock:<script.json>\""
                ))),
            },
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Mock(p) => write!(f, "mock:{}", p.display()),
            BackendSpec::Remote => f.write_str("remote"),
        }
    }
}

impl Serialize for BackendSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BackendSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditConfig {
    pub arms: usize,
    pub gap: f64,
    pub horizon: u32,
    /// Candidate scoring for the explore/greedy agent.
    pub scorer: BanditScorer,
    /// Temperature policy for `llm_temp`.
    pub temperature: TemperatureSchedule,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            arms: DEFAULT_ARMS,
            gap: DEFAULT_GAP,
            horizon: DEFAULT_HORIZON,
            scorer: BanditScorer::default(),
            temperature: TemperatureSchedule::Fixed { tau: 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeymazeConfig {
    /// World file; the built-in world when absent.
    pub world: Option<PathBuf>,
    pub max_steps: u32,
}

impl Default for KeymazeConfig {
    fn default() -> Self {
        Self {
            world: None,
            max_steps: DEFAULT_TEXT_HORIZON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DoraConfig {
    pub n_candidates: usize,
    pub alpha: f64,
    pub tau_decision: f64,
    pub tau_candidates: f64,
    pub tau_lambda: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub k: f64,
    pub acquisition: LogprobAcquisition,
    pub history_window: usize,
}

impl Default for DoraConfig {
    fn default() -> Self {
        Self {
            n_candidates: DEFAULT_N_CANDIDATES,
            alpha: ScoreParams::default().alpha,
            tau_decision: DEFAULT_TAU_DECISION,
            tau_candidates: DEFAULT_TAU_CANDIDATES,
            tau_lambda: DEFAULT_TAU_LAMBDA,
            lambda_min: DEFAULT_LAMBDA_MIN,
            lambda_max: DEFAULT_LAMBDA_MAX,
            k: DEFAULT_GROWTH,
            acquisition: LogprobAcquisition::default(),
            history_window: DEFAULT_HISTORY_WINDOW,
        }
    }
}

impl DoraConfig {
    pub fn params(&self, greedy_kind: PromptKind) -> DoraParams {
        DoraParams {
            n_candidates: self.n_candidates,
            tau_decision: self.tau_decision,
            tau_candidates: self.tau_candidates,
            tau_lambda: self.tau_lambda,
            score: ScoreParams {
                alpha: self.alpha,
                ..ScoreParams::default()
            },
            acquisition: self.acquisition,
            history_window: self.history_window,
            greedy_kind,
        }
    }

    /// Scheduled λ over `horizon` steps, or policy-sampled within the bounds.
    pub fn lambda_source(&self, agent: AgentKind, horizon: u32) -> Result<LambdaSource> {
        match agent {
            AgentKind::DoraAuto => LambdaSource::policy(self.lambda_min, self.lambda_max),
            _ => Ok(LambdaSource::Scheduled(LambdaSchedule::new(
                self.lambda_min,
                self.lambda_max,
                self.k,
                horizon.max(1),
            )?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub suite: Suite,
    pub agent: AgentKind,
    pub runs: usize,
    pub master_seed: u64,
    pub bandit: BanditConfig,
    pub keymaze: KeymazeConfig,
    pub dora: DoraConfig,
    pub backend: Option<BackendSpec>,
    /// Directory of prompt templates overriding the built-in set.
    pub prompts_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            suite: Suite::default(),
            agent: AgentKind::default(),
            runs: 20,
            master_seed: 0,
            bandit: BanditConfig::default(),
            keymaze: KeymazeConfig::default(),
            dora: DoraConfig::default(),
            backend: None,
            prompts_dir: None,
            output_dir: PathBuf::from("runs"),
            workers: None,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub suite: Option<Suite>,
    pub agent: Option<AgentKind>,
    pub runs: Option<usize>,
    pub master_seed: Option<u64>,
    pub backend: Option<BackendSpec>,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| DoraError::Config(format!("config: {e}")))
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DoraError::Config(format!("config file {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)
            .map_err(|e| DoraError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(BackendSpec::Mock(p)) = &mut self.backend {
            fix(p);
        }
        if let Some(p) = &mut self.keymaze.world {
            fix(p);
        }
        if let Some(p) = &mut self.prompts_dir {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    /// Flag values win over file values, which win over defaults.
    pub fn apply(&mut self, o: Overrides) {
        if let Some(v) = o.suite {
            self.suite = v;
        }
        if let Some(v) = o.agent {
            self.agent = v;
        }
        if let Some(v) = o.runs {
            self.runs = v;
        }
        if let Some(v) = o.master_seed {
            self.master_seed = v;
        }
        if let Some(v) = o.backend {
            self.backend = Some(v);
        }
        if let Some(v) = o.output_dir {
            self.output_dir = v;
        }
        if let Some(v) = o.workers {
            self.workers = Some(v);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DoraError::Config(m));
        if self.runs == 0 {
            return bad("runs must be >= 1".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be >= 1".into());
        }
        match self.suite {
            Suite::Bandit => {
                let b = &self.bandit;
                if b.arms < 2 || !(b.gap > 0.0 && b.gap < 1.0) || b.horizon == 0 {
                    return bad(format!(
                        "bandit needs arms >= 2, 0 < gap < 1, horizon >= 1 (got {}, {}, {})",
                        b.arms, b.gap, b.horizon
                    ));
                }
                if self.agent.needs_backend() && b.arms > crate::bandit::COLORS.len() {
                    return bad(format!(
                        "language-model agents support at most 5 arms, got {}",
                        b.arms
                    ));
                }
            }
            Suite::Keymaze => {
                if !self.agent.is_dora() {
                    return bad(format!(
                        "keymaze runs need dora_scheduled or dora_auto, got {}",
                        self.agent
                    ));
                }
                if self.keymaze.max_steps == 0 {
                    return bad("keymaze.max_steps must be >= 1".into());
                }
            }
        }
        if self.agent.needs_backend() {
            match &self.backend {
                None => return bad(format!("agent {} needs a backend", self.agent)),
                Some(BackendSpec::Mock(p)) if !p.is_file() => {
                    return bad(format!("mock script {} not found", p.display()))
                }
                _ => {}
            }
            self.dora
                .params(PromptKind::GreedyAction)
                .validate()
                .map_err(|e| DoraError::Config(e.to_string()))?;
            self.dora
                .lambda_source(self.agent, self.horizon())
                .map_err(|e| DoraError::Config(e.to_string()))?;
        }
        if let Some(p) = &self.keymaze.world {
            if self.suite == Suite::Keymaze && !p.is_file() {
                return bad(format!("world file {} not found", p.display()));
            }
        }
        if let Some(p) = &self.prompts_dir {
            if !p.is_dir() {
                return bad(format!("prompts directory {} not found", p.display()));
            }
        }
        Ok(())
    }

    /// Steps per run for the configured suite.
    pub fn horizon(&self) -> u32 {
        match self.suite {
            Suite::Bandit => self.bandit.horizon,
            Suite::Keymaze => self.keymaze.max_steps,
        }
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.master_seed.wrapping_add(run as u64)
    }

    pub fn load_prompts(&self) -> Result<Arc<Prompts>> {
        Ok(Arc::new(match &self.prompts_dir {
            Some(dir) => Prompts::load_dir(dir)?,
            None => Prompts::builtin(),
        }))
    }

    pub fn load_world(&self) -> Result<WorldDef> {
        match &self.keymaze.world {
            Some(p) => WorldDef::load(p),
            None => Ok(WorldDef::builtin()),
        }
    }
}

/// Produces a backend per run. Mock runs each get a fresh replay of the
/// script; remote runs share one client.
#[derive(Clone)]
pub enum BackendFactory {
    Mock(Arc<MockScript>),
    Remote(Arc<RemoteBackend>),
}

impl BackendFactory {
    pub fn from_spec(spec: &BackendSpec) -> Result<Self> {
        match spec {
            BackendSpec::Mock(path) => {
                let script = MockScript::load(path)?;
                // Validate up front so a bad script is a config error, not N run failures.
                MockPolicy::new(script.clone())?;
                Ok(BackendFactory::Mock(Arc::new(script)))
            }
            BackendSpec::Remote => Ok(BackendFactory::Remote(Arc::new(RemoteBackend::from_env()?))),
        }
    }

    pub fn make(&self) -> Result<Arc<dyn PolicyBackend>> {
        Ok(match self {
            BackendFactory::Mock(script) => Arc::new(MockPolicy::new((**script).clone())?),
            BackendFactory::Remote(r) => r.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_table() {
        let c = ExperimentConfig::default();
        assert_eq!(c.dora.tau_decision, 0.2);
        assert_eq!(c.dora.tau_candidates, 0.7);
        assert_eq!(c.dora.tau_lambda, 0.2);
        assert_eq!(c.dora.n_candidates, 20);
        assert_eq!(c.dora.alpha, 0.8);
        assert_eq!(c.dora.k, 5.0);
        assert_eq!((c.dora.lambda_min, c.dora.lambda_max), (0.0, 40.0));
        assert_eq!(
            (c.bandit.arms, c.bandit.gap, c.bandit.horizon),
            (5, 0.2, 200)
        );
    }

    #[test]
    fn precedence() {
        let mut c =
            ExperimentConfig::from_json(r#"{"agent":"ts","runs":5,"master_seed":9}"#).unwrap();
        assert_eq!((c.agent, c.runs, c.master_seed), (AgentKind::Ts, 5, 9));
        assert_eq!(c.bandit.horizon, 200);
        c.apply(Overrides {
            runs: Some(7),
            ..Overrides::default()
        });
        assert_eq!((c.agent, c.runs, c.master_seed), (AgentKind::Ts, 7, 9));
        assert_eq!(c.run_seed(3), 12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::from_json(r#"{"agnt":"ts"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"agent":"oracle"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"backend":"mock:"}"#).is_err());
        let zero = ExperimentConfig::from_json(r#"{"runs":0}"#).unwrap();
        assert!(matches!(zero.validate(), Err(DoraError::Config(_))));
        let no_backend = ExperimentConfig::from_json(r#"{"agent":"dora_scheduled"}"#).unwrap();
        assert!(no_backend.validate().is_err());
        let km = ExperimentConfig::from_json(r#"{"suite":"keymaze","agent":"ucb"}"#).unwrap();
        assert!(km.validate().is_err());
    }

    #[test]
    fn backend_spec_round_trip() {
        for s in ["remote", "mock:scripts/a.json"] {
            let spec: BackendSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert!("local".parse::<BackendSpec>().is_err());
        assert_eq!(
            "eps_greedy".parse::<AgentKind>().unwrap(),
            AgentKind::EpsGreedy
        );
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.json");
        std::fs::write(&path, r#"{"backend":"mock:s.json","output_dir":"out"}"#).unwrap();
        let c = ExperimentConfig::load(&path).unwrap();
        assert_eq!(
            c.backend,
            Some(BackendSpec::Mock(dir.path().join("s.json")))
        );
        assert_eq!(c.output_dir, dir.path().join("out"));
    }
}
