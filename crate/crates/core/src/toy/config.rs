//! JSON configs for toy scorers, as written by the planted-task generator and
//! read by `serve-toy` and in-process scorer specs.
//!
//! Probabilities are exact: either a string `"n/d"`, an integer, or a decimal
//! such as `0.7` (read as `7/10`). Relative paths resolve against the
//! directory holding the config file.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use super::{LexiconMt, NGramLm, Prob};
use crate::scorer::Scorer;
use crate::vocab::{VocabError, Vocabulary};

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("invalid toy model: {0}")]
    Invalid(String),
}

/// Parses `"3/5"`, `"2"` or `"0.75"` into an exact fraction.
pub fn parse_ratio(s: &str) -> Result<Prob, String> {
    let s = s.trim();
    let bad = || format!("not an exact probability: {s:?}");
    if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n.trim().parse().map_err(|_| bad())?;
        let d: i64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Prob::new(n, d));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if frac.len() > 15 || !frac.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let negative = int.starts_with('-');
    let int: i64 = if int.is_empty() || int == "-" { 0 } else { int.parse().map_err(|_| bad())? };
    let scale = 10i64.pow(frac.len() as u32);
    let frac: i64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
    let magnitude = int.abs() * scale + frac;
    Ok(Prob::new(if negative { -magnitude } else { magnitude }, scale))
}

/// Serde wrapper for an exact probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactProb(pub Prob);

impl Serialize for ExactProb {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0.to_string())
    }
}

impl<'de> Deserialize<'de> for ExactProb {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = ExactProb;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a fraction string like \"3/5\" or a decimal number")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<ExactProb, E> {
                parse_ratio(v).map(ExactProb).map_err(E::custom)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<ExactProb, E> {
                i64::try_from(v).map(|v| ExactProb(Prob::from_integer(v))).map_err(E::custom)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<ExactProb, E> {
                Ok(ExactProb(Prob::from_integer(v)))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<ExactProb, E> {
                // Shortest round-trip decimal, e.g. 0.7 → "0.7" → 7/10.
                parse_ratio(&v.to_string()).map(ExactProb).map_err(E::custom)
            }
        }
        deserializer.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexiconConfig {
    pub vocab: PathBuf,
    pub fidelity: ExactProb,
    pub eos_epsilon: ExactProb,
    /// Source token → weighted target tokens. Unlisted tokens copy through.
    #[serde(default)]
    pub lexicon: BTreeMap<String, Vec<(String, ExactProb)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NGramConfig {
    pub vocab: PathBuf,
    pub order: usize,
    pub k: ExactProb,
    /// Training text, one whitespace-tokenized sentence per line.
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ToyError> {
    let text = fs::read_to_string(path).map_err(|source| ToyError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| ToyError::Json { path: path.into(), source })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn base_dir(config_path: &Path) -> &Path {
    config_path.parent().unwrap_or(Path::new("."))
}

impl LexiconConfig {
    pub fn build(&self, vocab: &Vocabulary) -> Result<LexiconMt, ToyError> {
        let id = |tok: &str| vocab.id(tok).ok_or_else(|| ToyError::Invalid(format!("lexicon token {tok:?} not in vocabulary")));
        let mut lexicon = std::collections::HashMap::new();
        for (src, entry) in &self.lexicon {
            let targets = entry.iter().map(|(t, w)| Ok((id(t)?, w.0))).collect::<Result<Vec<_>, ToyError>>()?;
            lexicon.insert(id(src)?, targets);
        }
        let mt = LexiconMt::new(vocab, lexicon, self.fidelity.0, self.eos_epsilon.0).map_err(ToyError::Invalid)?;
        Ok(match &self.name {
            Some(name) => mt.with_name(name),
            None => mt,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Vocabulary, LexiconMt), ToyError> {
        let path = path.as_ref();
        let cfg: LexiconConfig = read_json(path)?;
        let vocab = Vocabulary::load(resolve(base_dir(path), &cfg.vocab))?;
        let mt = cfg.build(&vocab)?;
        Ok((vocab, mt))
    }
}

impl NGramConfig {
    pub fn build(&self, vocab: &Vocabulary, base: &Path) -> Result<NGramLm, ToyError> {
        let train_path = resolve(base, &self.train);
        let text = fs::read_to_string(&train_path).map_err(|source| ToyError::Io { path: train_path, source })?;
        let lm = NGramLm::train_text(vocab, self.order, self.k.0, &text).map_err(ToyError::Invalid)?;
        Ok(match &self.name {
            Some(name) => lm.with_name(name),
            None => lm,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Vocabulary, NGramLm), ToyError> {
        let path = path.as_ref();
        let cfg: NGramConfig = read_json(path)?;
        let base = base_dir(path);
        let vocab = Vocabulary::load(resolve(base, &cfg.vocab))?;
        let lm = cfg.build(&vocab, base)?;
        Ok((vocab, lm))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyKind {
    Lexicon,
    NGram,
}

impl std::str::FromStr for ToyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lexicon" => Ok(ToyKind::Lexicon),
            "ngram" => Ok(ToyKind::NGram),
            other => Err(format!("unknown toy model {other:?} (expected lexicon or ngram)")),
        }
    }
}

pub fn load_toy_scorer(kind: ToyKind, config: impl AsRef<Path>) -> Result<(Vocabulary, Arc<dyn Scorer>), ToyError> {
    Ok(match kind {
        ToyKind::Lexicon => {
            let (v, m) = LexiconConfig::load(config)?;
            (v, Arc::new(m))
        }
        ToyKind::NGram => {
            let (v, m) = NGramConfig::load(config)?;
            (v, Arc::new(m))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios() {
        assert_eq!(parse_ratio("3/5").unwrap(), Prob::new(3, 5));
        assert_eq!(parse_ratio("0.7").unwrap(), Prob::new(7, 10));
        assert_eq!(parse_ratio("1").unwrap(), Prob::from_integer(1));
        assert_eq!(parse_ratio(".25").unwrap(), Prob::new(1, 4));
        assert!(parse_ratio("1/0").is_err());
        assert!(parse_ratio("abc").is_err());
    }

    #[test]
    fn exact_prob_serde() {
        let p: ExactProb = serde_json::from_str("0.1").unwrap();
        assert_eq!(p.0, Prob::new(1, 10));
        let p: ExactProb = serde_json::from_str("\"2/3\"").unwrap();
        assert_eq!(serde_json::to_string(&p).unwrap(), "\"2/3\"");
        let p: ExactProb = serde_json::from_str("1").unwrap();
        assert_eq!(p.0, Prob::from_integer(1));
    }

    #[test]
    fn load_from_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("vocab.txt"), "#special: eos=</s>\n#special: unk=<unk>\n<unk>\n</s>\nP\nhe\nshe\n").unwrap();
        fs::write(dir.path().join("train.txt"), "he\nshe\n").unwrap();
        fs::write(
            dir.path().join("mt.json"),
            r#"{"vocab":"vocab.txt","fidelity":"7/10","eos_epsilon":0.1,"lexicon":{"P":[["he","3/5"],["she","2/5"]]}}"#,
        )
        .unwrap();
        fs::write(dir.path().join("lm.json"), r#"{"vocab":"vocab.txt","order":2,"k":"1/10","train":"train.txt"}"#).unwrap();
        let (v, mt) = load_toy_scorer(ToyKind::Lexicon, dir.path().join("mt.json")).unwrap();
        assert_eq!(mt.info().vocab_hash, v.hash());
        let (_, lm) = load_toy_scorer(ToyKind::NGram, dir.path().join("lm.json")).unwrap();
        assert_eq!(lm.info().vocab_hash, v.hash());

        fs::write(dir.path().join("bad.json"), r#"{"vocab":"vocab.txt","fidelity":1,"eos_epsilon":0,"lexicon":{"Q":[["he",1]]}}"#)
            .unwrap();
        assert!(matches!(LexiconConfig::load(dir.path().join("bad.json")), Err(ToyError::Invalid(_))));
    }
}
