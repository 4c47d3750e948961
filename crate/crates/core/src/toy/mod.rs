//! Deterministic in-process scorers for desk-scale verification.
//!
//! Toy models compute their distributions as exact rationals, so normalisation
//! holds with equality and the brute-force [`oracle`] can fuse in exact
//! arithmetic, independently of the engine's log-domain path.

pub mod config;
mod lexicon;
mod ngram;
pub mod oracle;
mod planted;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use num_rational::Ratio;
use num_traits::Zero;

use crate::scorer::{BackendSession, ConditioningSpec, Scorer, ScorerError, ScorerInfo};
use crate::vocab::{TokenId, VocabHash, Vocabulary};

pub use lexicon::LexiconMt;
pub use ngram::NGramLm;
pub use oracle::{oracle_greedy, ExactModel};
pub use planted::{build_planted_task, gender_of, planted_vocab, PlantedOptions, PlantedTask};

/// Exact probability.
pub type Prob = Ratio<i64>;

static NEXT_SESSION: AtomicU64 = AtomicU64::new(1);

pub(crate) fn next_session_id(prefix: &str) -> String {
    format!("{prefix}-{}", NEXT_SESSION.fetch_add(1, Ordering::Relaxed))
}

pub fn ln_prob(p: Prob) -> f64 {
    if p.is_zero() {
        f64::NEG_INFINITY
    } else {
        (*p.numer() as f64 / *p.denom() as f64).ln()
    }
}

pub fn to_logprobs(probs: &[Prob]) -> Vec<f64> {
    probs.iter().map(|&p| ln_prob(p)).collect()
}

/// Same distribution at every step, for every conditioning.
pub struct UniformScorer {
    size: usize,
    hash: VocabHash,
}

impl UniformScorer {
    pub fn new(vocab: &Vocabulary) -> Self {
        UniformScorer { size: vocab.len(), hash: vocab.hash() }
    }
}

impl Scorer for UniformScorer {
    fn info(&self) -> ScorerInfo {
        ScorerInfo { name: "uniform".into(), vocab_hash: self.hash }
    }

    fn open(&self, _conditioning: &ConditioningSpec) -> Result<Box<dyn BackendSession>, ScorerError> {
        Ok(Box::new(UniformSession { id: next_session_id("uniform"), size: self.size }))
    }
}

struct UniformSession {
    id: String,
    size: usize,
}

impl BackendSession for UniformSession {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&mut self) -> Result<Vec<f64>, ScorerError> {
        Ok(vec![(1.0 / self.size as f64).ln(); self.size])
    }

    fn append(&mut self, _id: TokenId) -> Result<(), ScorerError> {
        Ok(())
    }

    fn close(&mut self) -> Result<(), ScorerError> {
        Ok(())
    }
}

/// Everything a wrapped scorer saw during one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionTrace {
    pub session_id: String,
    pub conditioning: ConditioningSpec,
    pub appended: Vec<TokenId>,
    pub scored: usize,
    pub closed: bool,
}

/// Wraps a scorer and records every session opened through it.
#[derive(Clone)]
pub struct Recorder {
    inner: Arc<dyn Scorer>,
    traces: Arc<Mutex<Vec<SessionTrace>>>,
}

impl Recorder {
    pub fn new(inner: Arc<dyn Scorer>) -> Self {
        Recorder { inner, traces: Arc::new(Mutex::new(Vec::new())) }
    }

    /// Traces in the order sessions were opened.
    pub fn traces(&self) -> Vec<SessionTrace> {
        self.traces.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn clear(&self) {
        self.traces.lock().unwrap_or_else(|p| p.into_inner()).clear();
    }
}

impl Scorer for Recorder {
    fn info(&self) -> ScorerInfo {
        self.inner.info()
    }

    fn open(&self, conditioning: &ConditioningSpec) -> Result<Box<dyn BackendSession>, ScorerError> {
        let inner = self.inner.open(conditioning)?;
        let mut traces = self.traces.lock().unwrap_or_else(|p| p.into_inner());
        traces.push(SessionTrace {
            session_id: inner.id().to_string(),
            conditioning: conditioning.clone(),
            appended: Vec::new(),
            scored: 0,
            closed: false,
        });
        Ok(Box::new(RecordedSession { inner, slot: traces.len() - 1, traces: Arc::clone(&self.traces) }))
    }
}

struct RecordedSession {
    inner: Box<dyn BackendSession>,
    slot: usize,
    traces: Arc<Mutex<Vec<SessionTrace>>>,
}

impl RecordedSession {
    fn with_trace(&self, f: impl FnOnce(&mut SessionTrace)) {
        let mut traces = self.traces.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut traces[self.slot]);
    }
}

impl BackendSession for RecordedSession {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn score(&mut self) -> Result<Vec<f64>, ScorerError> {
        let out = self.inner.score()?;
        self.with_trace(|t| t.scored += 1);
        Ok(out)
    }

    fn append(&mut self, id: TokenId) -> Result<(), ScorerError> {
        self.inner.append(id)?;
        self.with_trace(|t| t.appended.push(id));
        Ok(())
    }

    fn close(&mut self) -> Result<(), ScorerError> {
        self.with_trace(|t| t.closed = true);
        self.inner.close()
    }
}
