//! Synthetic task with complementary error channels.
//!
//! Sources look like `noun PRON verb` and references like `noun he|she verb`,
//! where the pronoun agrees with the noun. The lexicon translator copies nouns
//! and verbs reliably but resolves `PRON` from a fixed, seeded majority
//! pronoun, so it is wrong for every noun of the other gender. The bigram
//! language model never sees the source: it knows noun/pronoun agreement from
//! its training text but guesses verbs from a seeded skewed prior. Mixing the
//! two fixes both error classes, which neither endpoint can do alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExactProb, LexiconConfig, NGramConfig, ToyError};
use super::{LexiconMt, NGramLm, Prob};
use crate::eval::{Corpus, Segment};
use crate::fusion::ScorerSlot;
use crate::vocab::Vocabulary;

pub const MIN_SIZE: usize = 50;
const LM_TRAIN_SENTENCES: usize = 400;
const DOC_LEN: usize = 5;
const PRONOUN_PLACEHOLDER: &str = "PRON";
const NOUNS: [(&str, &str); 4] = [("man", "he"), ("king", "he"), ("woman", "she"), ("queen", "she")];
const VERBS: [&str; 3] = ["runs", "sleeps", "eats"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedOptions {
    /// Without pronouns sentences are `noun verb` and the lexicon translator is already perfect.
    pub with_pronouns: bool,
}

impl Default for PlantedOptions {
    fn default() -> Self {
        PlantedOptions { with_pronouns: true }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedTask {
    pub seed: u64,
    pub vocab: Vocabulary,
    pub valid: Corpus,
    pub test: Corpus,
    /// Language-model training sentences.
    pub lm_train: Vec<String>,
    pub mt_config: LexiconConfig,
    pub lm_config: NGramConfig,
}

pub fn planted_vocab() -> Vocabulary {
    let mut tokens = vec!["<unk>", "</s>", PRONOUN_PLACEHOLDER, "he", "she"];
    tokens.extend(NOUNS.iter().map(|(n, _)| *n));
    tokens.extend(VERBS);
    Vocabulary::new(&tokens, &[("eos", "</s>"), ("unk", "<unk>")]).expect("planted vocabulary is valid")
}

/// Deterministic in `seed`; `size` segments each in the validation and test splits.
pub fn build_planted_task(seed: u64, size: usize, options: PlantedOptions) -> Result<PlantedTask, ToyError> {
    if size < MIN_SIZE {
        return Err(ToyError::Invalid(format!("planted task needs at least {MIN_SIZE} segments, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let majority = if rng.gen_bool(0.5) { "he" } else { "she" };
    let minority = if majority == "he" { "she" } else { "he" };
    let mut skewed = VERBS;
    skewed.shuffle(&mut rng);
    let with_pronouns = options.with_pronouns;

    let sentence = |noun: usize, verb: &str| -> (String, String) {
        let (n, pron) = NOUNS[noun];
        if with_pronouns {
            (format!("{n} {PRONOUN_PLACEHOLDER} {verb}"), format!("{n} {pron} {verb}"))
        } else {
            (format!("{n} {verb}"), format!("{n} {verb}"))
        }
    };

    let lm_train = (0..LM_TRAIN_SENTENCES)
        .map(|_| {
            let noun = rng.gen_range(0..NOUNS.len());
            // Verb prior 1/2, 1/4, 1/4 over the shuffled verbs.
            let verb = match rng.gen_range(0..4) {
                0 | 1 => skewed[0],
                2 => skewed[1],
                _ => skewed[2],
            };
            sentence(noun, verb).1
        })
        .collect();

    let mut split = |name: &str| -> Result<Corpus, ToyError> {
        let segments = (0..size)
            .map(|i| {
                let (src, reference) = sentence(rng.gen_range(0..NOUNS.len()), VERBS[rng.gen_range(0..VERBS.len())]);
                let pronoun = reference.split(' ').nth(1).filter(|_| with_pronouns).map(String::from);
                Segment {
                    doc_id: Some(format!("{name}-doc{:03}", i / DOC_LEN)),
                    reference: Some(reference),
                    phenomenon: pronoun.as_ref().map(|_| "gender".to_string()),
                    target_words: pronoun.into_iter().collect(),
                    ..Segment::new(format!("{name}-{i:04}"), src)
                }
            })
            .collect();
        Corpus::new(segments).map_err(|e| ToyError::Invalid(e.to_string()))
    };
    let valid = split("valid")?;
    let test = split("test")?;

    let mut lexicon = BTreeMap::new();
    if with_pronouns {
        lexicon.insert(
            PRONOUN_PLACEHOLDER.to_string(),
            vec![(majority.to_string(), ExactProb(Prob::new(3, 5))), (minority.to_string(), ExactProb(Prob::new(2, 5)))],
        );
    }
    let mt_config = LexiconConfig {
        vocab: PathBuf::from("vocab.txt"),
        fidelity: ExactProb(Prob::new(7, 10)),
        eos_epsilon: ExactProb(Prob::new(1, 10)),
        lexicon,
        name: Some("planted-mt".into()),
    };
    let lm_config = NGramConfig {
        vocab: PathBuf::from("vocab.txt"),
        order: 2,
        k: ExactProb(Prob::new(1, 10)),
        train: PathBuf::from("lm-train.txt"),
        name: Some("planted-lm".into()),
    };
    Ok(PlantedTask { seed, vocab: planted_vocab(), valid, test, lm_train, mt_config, lm_config })
}

impl PlantedTask {
    pub fn mt(&self) -> LexiconMt {
        self.mt_config.build(&self.vocab).expect("planted lexicon is valid")
    }

    pub fn lm(&self) -> NGramLm {
        let lm = NGramLm::train_text(&self.vocab, self.lm_config.order, self.lm_config.k.0, &self.lm_train.join("\n"))
            .expect("planted training text is in vocabulary");
        match &self.lm_config.name {
            Some(name) => lm.with_name(name),
            None => lm,
        }
    }

    /// `[translator (source role), language model (prompt role)]`.
    pub fn scorers(&self) -> Vec<ScorerSlot> {
        vec![ScorerSlot::source(Arc::new(self.mt())), ScorerSlot::prompt(Arc::new(self.lm()))]
    }

    /// Writes `vocab.txt`, `valid.jsonl`, `test.jsonl`, `lm-train.txt`, `mt.json` and `ngram.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), ToyError> {
        let dir = dir.as_ref();
        let put = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|source| ToyError::Io { path, source })
        };
        fs::create_dir_all(dir).map_err(|source| ToyError::Io { path: dir.into(), source })?;
        put("vocab.txt", self.vocab.to_file_string())?;
        put("valid.jsonl", self.valid.to_jsonl())?;
        put("test.jsonl", self.test.to_jsonl())?;
        put("lm-train.txt", self.lm_train.iter().map(|l| format!("{l}\n")).collect())?;
        put("mt.json", serde_json::to_string_pretty(&self.mt_config).expect("config serialises") + "\n")?;
        put("ngram.json", serde_json::to_string_pretty(&self.lm_config).expect("config serialises") + "\n")?;
        Ok(())
    }
}

/// Pronoun agreeing with a planted noun.
pub fn gender_of(noun: &str) -> Option<&'static str> {
    NOUNS.iter().find(|(n, _)| *n == noun).map(|(_, p)| *p)
}
