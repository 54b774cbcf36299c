//! Prompt templates. The built-in set is compiled in from `prompts/`; a
//! directory with the same file names can replace it at run time.

use std::fs;
use std::path::Path;

use crate::error::{DoraError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Prompts {
    pub mab_system: String,
    pub mab_history: String,
    pub zero_shot_system: String,
    pub zero_shot_cot: String,
    pub tree_of_thought: String,
    pub react_system: String,
    pub prompt_explore_system: String,
    pub mode_decision: String,
    pub candidate_generation: String,
    pub lambda_decision: String,
}

const FILES: [&str; 10] = [
    "mab_system.txt",
    "mab_history.txt",
    "zero_shot_system.txt",
    "zero_shot_cot.txt",
    "tree_of_thought.txt",
    "react_system.txt",
    "prompt_explore_system.txt",
    "mode_decision.txt",
    "candidate_generation.txt",
    "lambda_decision.txt",
];

impl Default for Prompts {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Prompts {
    pub fn builtin() -> Self {
        Self {
            mab_system: include_str!("../prompts/mab_system.txt").to_string(),
            mab_history: include_str!("../prompts/mab_history.txt").to_string(),
            zero_shot_system: include_str!("../prompts/zero_shot_system.txt").to_string(),
            zero_shot_cot: include_str!("../prompts/zero_shot_cot.txt").to_string(),
            tree_of_thought: include_str!("../prompts/tree_of_thought.txt").to_string(),
            react_system: include_str!("../prompts/react_system.txt").to_string(),
            prompt_explore_system: include_str!("../prompts/prompt_explore_system.txt").to_string(),
            mode_decision: include_str!("../prompts/mode_decision.txt").to_string(),
            candidate_generation: include_str!("../prompts/candidate_generation.txt").to_string(),
            lambda_decision: include_str!("../prompts/lambda_decision.txt").to_string(),
        }
    }

    /// Reads every template from `dir`. All ten files must be present.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            fs::read_to_string(dir.join(name)).map_err(|e| {
                DoraError::Config(format!("prompt file {}: {e}", dir.join(name).display()))
            })
        };
        let mut texts = FILES.iter().map(|f| read(f)).collect::<Result<Vec<_>>>()?;
        let mut next = || texts.remove(0);
        Ok(Self {
            mab_system: next(),
            mab_history: next(),
            zero_shot_system: next(),
            zero_shot_cot: next(),
            tree_of_thought: next(),
            react_system: next(),
            prompt_explore_system: next(),
            mode_decision: next(),
            candidate_generation: next(),
            lambda_decision: next(),
        })
    }

    pub fn file_names() -> &'static [&'static str] {
        &FILES
    }
}

/// Replaces `{key}` placeholders. Braces that are not a listed key are left alone.
pub fn render(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}
