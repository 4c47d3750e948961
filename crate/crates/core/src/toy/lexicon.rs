use std::collections::HashMap;
use std::sync::Arc;

use num_traits::{One, Zero};

use super::oracle::ExactModel;
use super::{next_session_id, to_logprobs, Prob};
use crate::scorer::{BackendSession, ConditioningSpec, Scorer, ScorerError, ScorerInfo};
use crate::vocab::{TokenId, VocabHash, Vocabulary};

/// Word-for-word translation model with monotone alignment.
///
/// At target position `i` while the source lasts,
/// `p(v) = α · lex(src[i])(v) + (1 − α) / |V|`, where `lex` is the (possibly
/// ambiguous) lexicon entry of the aligned source token; tokens without an
/// entry translate to themselves. Past the end of the source,
/// `p(v) = (1 − ε) · [v = eos] + ε / |V|`.
#[derive(Debug, Clone)]
pub struct LexiconMt {
    name: String,
    size: usize,
    eos: TokenId,
    hash: VocabHash,
    lexicon: Arc<HashMap<TokenId, Vec<(TokenId, Prob)>>>,
    fidelity: Prob,
    eos_epsilon: Prob,
}

impl LexiconMt {
    /// `lexicon` entries must have weights summing to one; `fidelity` and `eos_epsilon` lie in [0, 1].
    pub fn new(
        vocab: &Vocabulary,
        lexicon: HashMap<TokenId, Vec<(TokenId, Prob)>>,
        fidelity: Prob,
        eos_epsilon: Prob,
    ) -> Result<Self, String> {
        let unit = |p: Prob| p >= Prob::zero() && p <= Prob::one();
        if !unit(fidelity) || !unit(eos_epsilon) {
            return Err(format!("fidelity {fidelity} and eos epsilon {eos_epsilon} must lie in [0, 1]"));
        }
        for (src, entry) in &lexicon {
            let total: Prob = entry.iter().map(|(_, w)| *w).sum();
            if total != Prob::one() || entry.iter().any(|(_, w)| *w < Prob::zero()) {
                return Err(format!("lexicon entry for id {src} has weights summing to {total}"));
            }
            if let Some((bad, _)) = entry.iter().find(|(t, _)| *t as usize >= vocab.len()) {
                return Err(format!("lexicon entry for id {src} targets unknown id {bad}"));
            }
        }
        Ok(LexiconMt {
            name: "lexicon-mt".into(),
            size: vocab.len(),
            eos: vocab.eos_id(),
            hash: vocab.hash(),
            lexicon: Arc::new(lexicon),
            fidelity,
            eos_epsilon,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Distribution for target position `position` given the source.
    pub fn distribution_at(&self, source: &[TokenId], position: usize) -> Vec<Prob> {
        let n = self.size as i64;
        match source.get(position) {
            Some(&src) => {
                let floor = (Prob::one() - self.fidelity) / n;
                let mut probs = vec![floor; self.size];
                match self.lexicon.get(&src) {
                    Some(entry) => {
                        for &(tgt, w) in entry {
                            probs[tgt as usize] += self.fidelity * w;
                        }
                    }
                    None => probs[src as usize] += self.fidelity,
                }
                probs
            }
            None => {
                let mut probs = vec![self.eos_epsilon / n; self.size];
                probs[self.eos as usize] += Prob::one() - self.eos_epsilon;
                probs
            }
        }
    }

    fn source_of(conditioning: &ConditioningSpec) -> Result<&[TokenId], ScorerError> {
        match conditioning {
            ConditioningSpec::SourceConditioned { source_ids } => Ok(source_ids),
            ConditioningSpec::PromptConditioned { .. } => Err(ScorerError::Backend {
                code: "unsupported".into(),
                msg: "lexicon model needs a source-conditioned session".into(),
            }),
        }
    }
}

impl ExactModel for LexiconMt {
    fn vocab_size(&self) -> usize {
        self.size
    }

    fn probabilities(&self, conditioning: &ConditioningSpec, prefix: &[TokenId]) -> Result<Vec<Prob>, ScorerError> {
        Ok(self.distribution_at(Self::source_of(conditioning)?, prefix.len()))
    }
}

impl Scorer for LexiconMt {
    fn info(&self) -> ScorerInfo {
        ScorerInfo { name: self.name.clone(), vocab_hash: self.hash }
    }

    fn open(&self, conditioning: &ConditioningSpec) -> Result<Box<dyn BackendSession>, ScorerError> {
        let source = Self::source_of(conditioning)?.to_vec();
        if let Some(bad) = source.iter().find(|&&t| t as usize >= self.size) {
            return Err(ScorerError::TokenOutOfRange { id: *bad, size: self.size });
        }
        Ok(Box::new(LexiconSession { id: next_session_id("lexicon"), model: self.clone(), source, position: 0 }))
    }
}

struct LexiconSession {
    id: String,
    model: LexiconMt,
    source: Vec<TokenId>,
    position: usize,
}

impl BackendSession for LexiconSession {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&mut self) -> Result<Vec<f64>, ScorerError> {
        Ok(to_logprobs(&self.model.distribution_at(&self.source, self.position)))
    }

    fn append(&mut self, _id: TokenId) -> Result<(), ScorerError> {
        self.position += 1;
        Ok(())
    }

    fn close(&mut self) -> Result<(), ScorerError> {
        Ok(())
    }
}
