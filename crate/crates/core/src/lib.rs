//! Sequence-level exploration for language-model agents.
//!
//! The engine proposes a list of candidate actions, scores each from its
//! token log-probabilities, and samples one through a λ-sharpened softmax.
//! Around it sit a Bernoulli bandit lab with classical baselines, a small
//! deterministic text world, and a batch harness that writes JSONL/CSV
//! artifacts.

pub mod agent;
pub mod bandit;
pub mod error;
pub mod harness;
pub mod policy;
pub mod prompts;
pub mod schedule;
pub mod scoring;
pub mod textenv;

pub use error::{BackendError, DoraError, Result};
