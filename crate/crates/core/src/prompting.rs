//! Prompt templates for the prompt-conditioned scorer.
//!
//! Every template ends with the bare `"{tgt-language}:"` line, so the language
//! model is prefix-decoded through instruction and source and its next token is
//! the first target token. Lines are joined with a single `\n`, with no trailing
//! newline:
//!
//! ```text
//! Translate the following sentence from German to English:
//! German: {example or context source}
//! English: {example or context translation}
//! German: {src}
//! English:
//! ```
//!
//! The domain template appends ` in a {style} style` to the instruction.
//! [`Template::None`] renders the empty string (unprompted ensembling).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("invalid prompt spec: {0}")]
    InvalidPromptSpec(String),
    #[error("shots file line {line}: {source}")]
    BadShot { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    #[default]
    Baseline,
    Domain,
    FewShot,
    Context,
    None,
}

impl FromStr for Template {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "baseline" => Template::Baseline,
            "domain" => Template::Domain,
            "few_shot" | "few-shot" => Template::FewShot,
            "context" => Template::Context,
            "none" => Template::None,
            other => return Err(PromptError::InvalidPromptSpec(format!("unknown template {other:?}"))),
        })
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Template::Baseline => "baseline",
            Template::Domain => "domain",
            Template::FewShot => "few_shot",
            Template::Context => "context",
            Template::None => "none",
        })
    }
}

/// A (source, translation) pair: a static example shot or a context entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub src: String,
    pub tgt: String,
}

impl Pair {
    pub fn new(src: impl Into<String>, tgt: impl Into<String>) -> Self {
        Pair { src: src.into(), tgt: tgt.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PromptSpec {
    pub template: Template,
    pub src_language: String,
    pub tgt_language: String,
    pub style: Option<String>,
    pub shots: Vec<Pair>,
    pub context: Vec<Pair>,
    pub src: String,
}

impl PromptSpec {
    pub fn baseline(src_language: impl Into<String>, tgt_language: impl Into<String>, src: impl Into<String>) -> Self {
        PromptSpec {
            template: Template::Baseline,
            src_language: src_language.into(),
            tgt_language: tgt_language.into(),
            src: src.into(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        match self.template {
            Template::Domain if self.style.as_deref().is_none_or(|s| s.trim().is_empty()) => {
                Err(PromptError::InvalidPromptSpec("domain template needs a nonempty style".into()))
            }
            Template::FewShot if self.shots.is_empty() => {
                Err(PromptError::InvalidPromptSpec("few_shot template needs at least one shot".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn render(&self) -> Result<String, PromptError> {
        self.validate()?;
        let (src_lang, tgt_lang) = (&self.src_language, &self.tgt_language);
        let mut lines = Vec::new();
        let instruction = match self.template {
            Template::None => return Ok(String::new()),
            Template::Domain => format!(
                "Translate the following sentence from {src_lang} to {tgt_lang} in a {} style:",
                self.style.as_deref().unwrap_or_default()
            ),
            _ => format!("Translate the following sentence from {src_lang} to {tgt_lang}:"),
        };
        lines.push(instruction);
        let examples: &[Pair] = match self.template {
            Template::FewShot => &self.shots,
            Template::Context => &self.context,
            _ => &[],
        };
        for pair in examples {
            lines.push(format!("{src_lang}: {}", pair.src));
            lines.push(format!("{tgt_lang}: {}", pair.tgt));
        }
        lines.push(format!("{src_lang}: {}", self.src));
        lines.push(format!("{tgt_lang}:"));
        Ok(lines.join("\n"))
    }
}

/// Fills `context` with the last `min(n, window.len())` pairs, oldest first.
pub fn build_context_spec(base: &PromptSpec, window: &[Pair], n: usize) -> PromptSpec {
    let keep = n.min(window.len());
    PromptSpec {
        template: Template::Context,
        context: window[window.len() - keep..].to_vec(),
        ..base.clone()
    }
}

/// First `n` example pairs from a JSONL file of `{"src": ..., "tgt": ...}` objects.
pub fn load_shots(path: impl AsRef<Path>, n: usize) -> Result<Vec<Pair>, PromptError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .take(n)
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| PromptError::BadShot { line: i + 1, source }))
        .collect()
}

/// ISO code → English display name. Unknown codes pass through unchanged, so a
/// display name can be given directly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LanguageNames(BTreeMap<String, String>);

impl Default for LanguageNames {
    fn default() -> Self {
        let pairs = [
            ("ar", "Arabic"),
            ("cs", "Czech"),
            ("de", "German"),
            ("en", "English"),
            ("es", "Spanish"),
            ("fr", "French"),
            ("ha", "Hausa"),
            ("it", "Italian"),
            ("ja", "Japanese"),
            ("nl", "Dutch"),
            ("pl", "Polish"),
            ("pt", "Portuguese"),
            ("ru", "Russian"),
            ("tr", "Turkish"),
            ("uk", "Ukrainian"),
            ("zh", "Chinese"),
        ];
        LanguageNames(pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect())
    }
}

impl LanguageNames {
    /// Default table overridden by the entries of `overrides`.
    pub fn with_overrides(overrides: BTreeMap<String, String>) -> Self {
        let mut names = Self::default();
        names.0.extend(overrides);
        names
    }

    pub fn name<'a>(&'a self, code: &'a str) -> &'a str {
        self.0.get(code).map(String::as_str).unwrap_or(code)
    }
}
