use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use num_traits::Zero;

use super::oracle::ExactModel;
use super::{next_session_id, to_logprobs, Prob};
use crate::scorer::{BackendSession, ConditioningSpec, Scorer, ScorerError, ScorerInfo};
use crate::vocab::{TokenId, VocabHash, Vocabulary};

#[derive(Debug, Default)]
struct Counts {
    total: u64,
    next: Vec<u64>,
}

/// Add-k smoothed n-gram language model over the shared vocabulary.
///
/// The scored stream is `eos^(n-1) ++ tokenize(prompt) ++ prefix`, so the prompt
/// conditions the first target token through the last `n − 1` positions and an
/// empty prompt is the same as no conditioning at all. Training sentences are
/// padded the same way and terminated by eos.
#[derive(Debug, Clone)]
pub struct NGramLm {
    name: String,
    order: usize,
    k: Prob,
    eos: TokenId,
    hash: VocabHash,
    vocab: Arc<Vocabulary>,
    counts: Arc<HashMap<Vec<TokenId>, Counts>>,
}

impl NGramLm {
    pub fn train(vocab: &Vocabulary, order: usize, k: Prob, sentences: &[Vec<TokenId>]) -> Result<Self, String> {
        if order == 0 {
            return Err("n-gram order must be at least 1".into());
        }
        if k <= Prob::zero() {
            return Err(format!("add-k constant must be positive, got {k}"));
        }
        let eos = vocab.eos_id();
        let mut counts: HashMap<Vec<TokenId>, Counts> = HashMap::new();
        for sentence in sentences {
            if let Some(bad) = sentence.iter().find(|&&t| t as usize >= vocab.len()) {
                return Err(format!("training token id {bad} outside vocabulary"));
            }
            let mut stream = vec![eos; order - 1];
            stream.extend_from_slice(sentence);
            stream.push(eos);
            for window in stream.windows(order) {
                let (ctx, next) = window.split_at(order - 1);
                let entry = counts
                    .entry(ctx.to_vec())
                    .or_insert_with(|| Counts { total: 0, next: vec![0; vocab.len()] });
                entry.total += 1;
                entry.next[next[0] as usize] += 1;
            }
        }
        Ok(NGramLm {
            name: format!("{order}-gram-lm"),
            order,
            k,
            eos,
            hash: vocab.hash(),
            vocab: Arc::new(vocab.clone()),
            counts: Arc::new(counts),
        })
    }

    /// Trains on whitespace-tokenized lines of text.
    pub fn train_text(vocab: &Vocabulary, order: usize, k: Prob, text: &str) -> Result<Self, String> {
        let sentences = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| vocab.tokenize(l).map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::train(vocab, order, k, &sentences)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `p(v | ctx) = (c(ctx, v) + k) / (c(ctx) + k·|V|)`; `ctx` holds exactly `order − 1` ids.
    pub fn distribution_for_context(&self, ctx: &[TokenId]) -> Vec<Prob> {
        let size = self.vocab.len();
        let denom_extra = self.k * size as i64;
        match self.counts.get(ctx) {
            Some(c) => {
                let denom = denom_extra + c.total as i64;
                c.next.iter().map(|&n| (self.k + n as i64) / denom).collect()
            }
            None => vec![self.k / denom_extra; size],
        }
    }

    fn prompt_ids(&self, conditioning: &ConditioningSpec) -> Result<Vec<TokenId>, ScorerError> {
        match conditioning {
            ConditioningSpec::PromptConditioned { prompt } => Ok(self.vocab.tokenize(prompt)?),
            ConditioningSpec::SourceConditioned { .. } => Err(ScorerError::Backend {
                code: "unsupported".into(),
                msg: "n-gram model needs a prompt-conditioned session".into(),
            }),
        }
    }
}

impl ExactModel for NGramLm {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn probabilities(&self, conditioning: &ConditioningSpec, prefix: &[TokenId]) -> Result<Vec<Prob>, ScorerError> {
        let mut stream = vec![self.eos; self.order - 1];
        stream.extend(self.prompt_ids(conditioning)?);
        stream.extend_from_slice(prefix);
        Ok(self.distribution_for_context(&stream[stream.len() - (self.order - 1)..]))
    }
}

impl Scorer for NGramLm {
    fn info(&self) -> ScorerInfo {
        ScorerInfo { name: self.name.clone(), vocab_hash: self.hash }
    }

    fn open(&self, conditioning: &ConditioningSpec) -> Result<Box<dyn BackendSession>, ScorerError> {
        let mut context: VecDeque<TokenId> = std::iter::repeat_n(self.eos, self.order - 1).collect();
        for id in self.prompt_ids(conditioning)? {
            context.push_back(id);
            context.pop_front();
        }
        Ok(Box::new(NGramSession { id: next_session_id("ngram"), model: self.clone(), context }))
    }
}

/// Keeps only the rolling `order − 1` token context.
struct NGramSession {
    id: String,
    model: NGramLm,
    context: VecDeque<TokenId>,
}

impl BackendSession for NGramSession {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&mut self) -> Result<Vec<f64>, ScorerError> {
        let ctx: Vec<TokenId> = self.context.iter().copied().collect();
        Ok(to_logprobs(&self.model.distribution_for_context(&ctx)))
    }

    fn append(&mut self, id: TokenId) -> Result<(), ScorerError> {
        if self.model.order > 1 {
            self.context.push_back(id);
            self.context.pop_front();
        }
        Ok(())
    }

    fn close(&mut self) -> Result<(), ScorerError> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::ScorerSession;
    use num_traits::One;

    fn vocab() -> Vocabulary {
        Vocabulary::new(&["<unk>", "</s>", "a", "b"], &[("eos", "</s>"), ("unk", "<unk>")]).unwrap()
    }

    #[test]
    fn unigram_counts() {
        // Corpus "a a b": counts a=2, b=1, </s>=1 over 4 events; add-k with k=1/10.
        let v = vocab();
        let lm = NGramLm::train_text(&v, 1, Prob::new(1, 10), "a a b\n").unwrap();
        let p = lm.probabilities(&ConditioningSpec::prompt(""), &[]).unwrap();
        let denom = Prob::from_integer(4) + Prob::new(4, 10);
        assert_eq!(p[2], (Prob::from_integer(2) + Prob::new(1, 10)) / denom);
        assert_eq!(p[3], (Prob::from_integer(1) + Prob::new(1, 10)) / denom);
        assert_eq!(p[0], Prob::new(1, 10) / denom);
        // Ignoring smoothing mass, a carries 2/3 of the non-eos mass.
        let raw_a = p[2] - Prob::new(1, 10) / denom;
        let raw_b = p[3] - Prob::new(1, 10) / denom;
        assert_eq!(raw_a / (raw_a + raw_b), Prob::new(2, 3));
    }

    #[test]
    fn exact_normalisation() {
        let v = vocab();
        let lm = NGramLm::train_text(&v, 3, Prob::new(1, 3), "a b a\nb b\n").unwrap();
        for ctx in [[1, 1], [1, 2], [2, 3], [0, 0]] {
            let total: Prob = lm.distribution_for_context(&ctx).into_iter().sum();
            assert_eq!(total, Prob::one());
        }
    }

    #[test]
    fn bigram_conditioning_and_unseen_context() {
        let v = vocab();
        let lm = NGramLm::train_text(&v, 2, Prob::new(1, 10), "a b\na b\n").unwrap();
        let after_a = lm.distribution_for_context(&[2]);
        assert_eq!(after_a[3], (Prob::from_integer(2) + Prob::new(1, 10)) / (Prob::from_integer(2) + Prob::new(4, 10)));
        let unseen = lm.distribution_for_context(&[0]);
        assert!(unseen.iter().all(|&p| p == Prob::new(1, 4)));
    }

    #[test]
    fn prompt_flows_into_context() {
        let v = vocab();
        let lm = NGramLm::train_text(&v, 2, Prob::new(1, 10), "a b\n").unwrap();
        let with_prompt = lm.probabilities(&ConditioningSpec::prompt("b a"), &[]).unwrap();
        assert_eq!(with_prompt, lm.distribution_for_context(&[2]));
        let empty = lm.probabilities(&ConditioningSpec::prompt(""), &[]).unwrap();
        assert_eq!(empty, lm.distribution_for_context(&[1]));
    }

    #[test]
    fn incremental_matches_scratch() {
        let v = vocab();
        let lm = NGramLm::train_text(&v, 3, Prob::new(1, 2), "a b a b\nb a\n").unwrap();
        let cond = ConditioningSpec::prompt("a zz b");
        let mut s = ScorerSession::open(&lm, &v, cond.clone()).unwrap();
        let mut prefix = Vec::new();
        for tok in [2, 3, 3, 2, 0] {
            let got = s.next_distribution().unwrap();
            assert_eq!(got.logprobs(), to_logprobs(&lm.probabilities(&cond, &prefix).unwrap()).as_slice());
            s.append_token(tok).unwrap();
            prefix.push(tok);
        }
    }

    #[test]
    fn rejects_bad_params() {
        let v = vocab();
        assert!(NGramLm::train(&v, 0, Prob::new(1, 2), &[]).is_err());
        assert!(NGramLm::train(&v, 2, Prob::zero(), &[]).is_err());
        assert!(NGramLm::train(&v, 2, Prob::one(), &[vec![9]]).is_err());
    }
}
