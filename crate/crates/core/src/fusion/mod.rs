//! Convex mixing of next-token distributions and greedy decoding under it.
//!
//! For weights `w` on the simplex the fused log-probability of token `v` is
//! `log Σ_k w_k · exp(d_k[v])`, evaluated with log-sum-exp so near-`-inf`
//! inputs stay exact. Terms with zero weight are dropped rather than added as
//! `-inf`, which makes a one-hot weight vector reproduce its input bit for bit.

mod corpus;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scorer::{ConditioningSpec, Scorer, ScorerError, ScorerSession, TokenDistribution};
use crate::vocab::{TokenId, VocabError, Vocabulary};

pub use corpus::{decode_corpus, CorpusError, CorpusOptions, Outcome, PromptPlan, Role, ScorerSlot, SegmentError, SegmentResult};

pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_MIN_MAX_LEN: usize = 256;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("invalid decode config: {0}")]
    InvalidConfig(String),
    #[error("scorer {scorer} failed at step {step}: {source}")]
    Scorer {
        step: usize,
        scorer: usize,
        #[source]
        source: ScorerError,
    },
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// `log Σ exp(x)`, returning `-inf` when every entry is `-inf`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if xs.len() == 1 {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Weighted mixture of `dists` in probability space, returned as log-probabilities.
pub fn fuse(dists: &[&TokenDistribution], weights: &[f64]) -> Result<TokenDistribution, DecodeError> {
    let rows: Vec<&[f64]> = dists.iter().map(|d| d.logprobs()).collect();
    fuse_logprobs(&rows, weights).map(TokenDistribution::from_trusted)
}

/// [`fuse`] over raw log-probability rows.
pub fn fuse_logprobs(rows: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>, DecodeError> {
    if rows.len() != weights.len() {
        return Err(DecodeError::ShapeError(format!("{} distributions but {} weights", rows.len(), weights.len())));
    }
    let Some(first) = rows.first() else {
        return Err(DecodeError::ShapeError("no distributions to fuse".into()));
    };
    let n = first.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(DecodeError::ShapeError(format!("distribution lengths {} and {}", n, bad.len())));
    }
    let active: Vec<(f64, &[f64])> =
        weights.iter().zip(rows).filter(|(w, _)| **w > 0.0).map(|(w, r)| (w.ln(), *r)).collect();
    let mut terms = Vec::with_capacity(active.len());
    let fused = (0..n)
        .map(|v| {
            terms.clear();
            terms.extend(active.iter().map(|(lw, row)| lw + row[v]));
            logsumexp(&terms)
        })
        .collect();
    Ok(fused)
}

/// Index of the largest entry; ties go to the lowest id.
pub fn argmax(logprobs: &[f64]) -> Option<TokenId> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in logprobs.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i as TokenId)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LengthFallback {
    /// On hitting the cap, close the hypothesis as if eos had been chosen.
    #[default]
    EmitEos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// One weight per scorer; nonnegative, summing to 1.
    pub weights: Vec<f64>,
    /// Token cap. `None` means `max(256, 2 × source length + 10)`.
    pub max_len: Option<usize>,
    #[serde(default)]
    pub tie_break: TieBreak,
    /// Zero-weight scorers are never opened or queried.
    pub skip_zero_weight: bool,
    #[serde(default)]
    pub length_fallback: LengthFallback,
}

impl DecodeConfig {
    pub fn new(weights: Vec<f64>) -> Self {
        DecodeConfig {
            weights,
            max_len: None,
            tie_break: TieBreak::LowestId,
            skip_zero_weight: true,
            length_fallback: LengthFallback::EmitEos,
        }
    }

    /// Weights `[λ, 1 − λ]`: λ on the first (translation) scorer.
    pub fn two_way(lambda: f64) -> Self {
        Self::new(vec![lambda, 1.0 - lambda])
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = Some(max_len);
        self
    }

    pub fn strict(mut self) -> Self {
        self.skip_zero_weight = false;
        self
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.weights.is_empty() {
            return Err(DecodeError::InvalidConfig("no weights".into()));
        }
        if let Some(w) = self.weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(DecodeError::InvalidConfig(format!("weight {w} is not a nonnegative number")));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(DecodeError::InvalidConfig(format!("weights sum to {sum}, not 1")));
        }
        if self.max_len == Some(0) {
            return Err(DecodeError::InvalidConfig("max_len must be positive".into()));
        }
        Ok(())
    }

    pub fn effective_max_len(&self, source_len: usize) -> usize {
        self.max_len.unwrap_or_else(|| DEFAULT_MIN_MAX_LEN.max(2 * source_len + 10))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Eos,
    MaxLen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub id: TokenId,
    pub fused_logprob: f64,
    /// Each scorer's log-probability for `id`; `None` for skipped scorers.
    pub scorer_logprobs: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Emitted ids, eos excluded.
    pub token_ids: Vec<TokenId>,
    pub text: String,
    /// One record per emitted token plus the terminal (eos) step.
    pub steps: Vec<StepRecord>,
    pub terminated_by: Termination,
}

/// Greedy decoding under the fused distribution of `scorers`.
///
/// Every session sees the ensemble's chosen token, never its own argmax.
pub fn greedy_decode(
    scorers: &[&dyn Scorer],
    conditionings: &[ConditioningSpec],
    cfg: &DecodeConfig,
    vocab: &Vocabulary,
) -> Result<DecodeResult, DecodeError> {
    cfg.validate()?;
    if scorers.len() != conditionings.len() || scorers.len() != cfg.weights.len() {
        return Err(DecodeError::ShapeError(format!(
            "{} scorers, {} conditionings, {} weights",
            scorers.len(),
            conditionings.len(),
            cfg.weights.len()
        )));
    }
    let source_len = conditionings
        .iter()
        .find_map(|c| match c {
            ConditioningSpec::SourceConditioned { source_ids } => Some(source_ids.len()),
            ConditioningSpec::PromptConditioned { .. } => None,
        })
        .unwrap_or(0);
    let max_len = cfg.effective_max_len(source_len);
    let eos = vocab.eos_id();

    let mut sessions: Vec<Option<ScorerSession>> = Vec::with_capacity(scorers.len());
    for (k, (scorer, cond)) in scorers.iter().zip(conditionings).enumerate() {
        if cfg.skip_zero_weight && cfg.weights[k] == 0.0 {
            sessions.push(None);
            continue;
        }
        let session = ScorerSession::open(*scorer, vocab, cond.clone())
            .map_err(|source| DecodeError::Scorer { step: 0, scorer: k, source })?;
        sessions.push(Some(session));
    }
    let active: Vec<usize> = (0..sessions.len()).filter(|&k| sessions[k].is_some()).collect();
    let active_weights: Vec<f64> = active.iter().map(|&k| cfg.weights[k]).collect();

    let mut token_ids = Vec::new();
    let mut steps = Vec::new();
    let terminated_by = loop {
        let step = token_ids.len();
        let mut dists = Vec::with_capacity(active.len());
        for &k in &active {
            let session = sessions[k].as_mut().expect("active session");
            let dist =
                session.next_distribution().map_err(|source| DecodeError::Scorer { step, scorer: k, source })?;
            dists.push(dist);
        }
        let refs: Vec<&TokenDistribution> = dists.iter().collect();
        let fused = fuse(&refs, &active_weights)?;
        let at_cap = step == max_len;
        let chosen = if at_cap { eos } else { argmax(fused.logprobs()).expect("nonempty vocabulary") };

        let mut scorer_logprobs = vec![None; scorers.len()];
        for (slot, &k) in active.iter().enumerate() {
            scorer_logprobs[k] = Some(dists[slot].logprobs()[chosen as usize]);
        }
        steps.push(StepRecord { id: chosen, fused_logprob: fused.logprobs()[chosen as usize], scorer_logprobs });

        if at_cap {
            break Termination::MaxLen;
        }
        if chosen == eos {
            break Termination::Eos;
        }
        for &k in &active {
            let session = sessions[k].as_mut().expect("active session");
            session.append_token(chosen).map_err(|source| DecodeError::Scorer { step, scorer: k, source })?;
        }
        token_ids.push(chosen);
    };

    for session in sessions.iter_mut().flatten() {
        session.close();
    }
    let text = vocab.detokenize(&token_ids)?;
    Ok(DecodeResult { token_ids, text, steps, terminated_by })
}
