//! The probability-provider contract.
//!
//! A [`Scorer`] is a shareable handle to a model (in-process toy model or a
//! remote backend). Each decode opens one [`ScorerSession`] per scorer; the
//! session holds the conditioning (source ids or rendered prompt) and the
//! accepted target prefix, and yields one normalised log-distribution per step.
//!
//! Backends only implement [`BackendSession`]. The engine-side
//! [`ScorerSession`] wraps it and enforces the contract: the vocab handshake,
//! bounds on appended ids, closure after eos, and the normalisation gate on
//! every returned distribution.

pub mod conformance;
pub mod remote;
pub mod server;
pub mod wire;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::logsumexp;
use crate::vocab::{TokenId, VocabError, VocabHash, Vocabulary};

pub use remote::RemoteScorer;

/// Maximum allowed |logsumexp(logprobs)| for a distribution to be accepted.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-4;

/// Default per-call timeout for remote scorers.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

/// Environment variable overriding [`DEFAULT_TIMEOUT`], in whole seconds.
pub const TIMEOUT_ENV: &str = "FUSEDEC_TIMEOUT_SECS";

pub fn timeout_from_env() -> Duration {
    std::env::var(TIMEOUT_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(Duration::from_secs)
        .unwrap_or(DEFAULT_TIMEOUT)
}

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("vocabulary mismatch: engine has {expected}, scorer has {found}")]
    VocabMismatch { expected: VocabHash, found: VocabHash },
    #[error("scorer did not answer within {0:?}")]
    ScorerTimeout(Duration),
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("session is closed")]
    SessionClosed,
    #[error("token id {id} outside vocabulary of size {size}")]
    TokenOutOfRange { id: TokenId, size: usize },
    #[error("backend error [{code}]: {msg}")]
    Backend { code: String, msg: String },
}

impl From<VocabError> for ScorerError {
    fn from(e: VocabError) -> Self {
        match e {
            VocabError::VocabMismatch { expected, found } => ScorerError::VocabMismatch { expected, found },
            other => ScorerError::Backend { code: "vocab".into(), msg: other.to_string() },
        }
    }
}

/// What a session is conditioned on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditioningSpec {
    /// Translation-model style: the source sentence as shared-vocab ids.
    SourceConditioned { source_ids: Vec<TokenId> },
    /// Language-model style: rendered prompt text, tokenized backend-side.
    PromptConditioned { prompt: String },
}

impl ConditioningSpec {
    pub fn source(ids: Vec<TokenId>) -> Self {
        ConditioningSpec::SourceConditioned { source_ids: ids }
    }

    pub fn prompt(text: impl Into<String>) -> Self {
        ConditioningSpec::PromptConditioned { prompt: text.into() }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ConditioningSpec::SourceConditioned { .. } => "source_conditioned",
            ConditioningSpec::PromptConditioned { .. } => "prompt_conditioned",
        }
    }
}

/// Natural-log probabilities over the shared vocabulary. Guaranteed finite or
/// `-inf`, never NaN, and normalised within [`NORMALIZATION_TOLERANCE`].
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution(Vec<f64>);

impl TokenDistribution {
    pub fn new(logprobs: Vec<f64>, vocab_size: usize) -> Result<Self, ScorerError> {
        if logprobs.len() != vocab_size {
            return Err(ScorerError::ProtocolError(format!(
                "distribution has {} entries, vocabulary has {vocab_size}",
                logprobs.len()
            )));
        }
        if let Some(i) = logprobs.iter().position(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(ScorerError::ProtocolError(format!("entry {i} is {}", logprobs[i])));
        }
        let total = logsumexp(&logprobs);
        if !total.is_finite() || total.abs() > NORMALIZATION_TOLERANCE {
            return Err(ScorerError::ProtocolError(format!("distribution not normalised: logsumexp = {total}")));
        }
        Ok(TokenDistribution(logprobs))
    }

    /// Skips validation. Used for values produced by [`crate::fuse`] from
    /// already-validated inputs.
    pub(crate) fn from_trusted(logprobs: Vec<f64>) -> Self {
        TokenDistribution(logprobs)
    }

    pub fn logprobs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScorerInfo {
    pub name: String,
    pub vocab_hash: VocabHash,
}

/// A model that can open conditional scoring sessions.
pub trait Scorer: Send + Sync {
    /// Handshake information. Remote scorers answer this from their cached `hello_ack`.
    fn info(&self) -> ScorerInfo;

    fn open(&self, conditioning: &ConditioningSpec) -> Result<Box<dyn BackendSession>, ScorerError>;
}

impl<S: Scorer + ?Sized> Scorer for Arc<S> {
    fn info(&self) -> ScorerInfo {
        (**self).info()
    }

    fn open(&self, conditioning: &ConditioningSpec) -> Result<Box<dyn BackendSession>, ScorerError> {
        (**self).open(conditioning)
    }
}

/// Raw per-session backend operations. Returned distributions are validated by
/// [`ScorerSession`], not here.
pub trait BackendSession: Send {
    fn id(&self) -> &str;
    fn score(&mut self) -> Result<Vec<f64>, ScorerError>;
    fn append(&mut self, id: TokenId) -> Result<(), ScorerError>;
    fn close(&mut self) -> Result<(), ScorerError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SessionState {
    Open,
    /// eos was appended; no further tokens accepted.
    Finished,
    Closed,
}

/// Engine-side session handle.
///
/// Must be driven by one thread at a time; distinct sessions are independent.
pub struct ScorerSession {
    backend: Box<dyn BackendSession>,
    conditioning: ConditioningSpec,
    prefix: Vec<TokenId>,
    vocab_hash: VocabHash,
    vocab_size: usize,
    eos_id: TokenId,
    state: SessionState,
}

impl std::fmt::Debug for ScorerSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScorerSession")
            .field("id", &self.backend.id())
            .field("conditioning", &self.conditioning)
            .field("prefix", &self.prefix)
            .field("state", &self.state)
            .finish()
    }
}

impl ScorerSession {
    /// Checks the scorer's vocabulary against `vocab` and opens a fresh session.
    pub fn open(scorer: &dyn Scorer, vocab: &Vocabulary, conditioning: ConditioningSpec) -> Result<Self, ScorerError> {
        let info = scorer.info();
        crate::vocab::check_hash(vocab.hash(), info.vocab_hash)?;
        let backend = scorer.open(&conditioning)?;
        Ok(ScorerSession {
            backend,
            conditioning,
            prefix: Vec::new(),
            vocab_hash: vocab.hash(),
            vocab_size: vocab.len(),
            eos_id: vocab.eos_id(),
            state: SessionState::Open,
        })
    }

    pub fn id(&self) -> &str {
        self.backend.id()
    }

    pub fn conditioning(&self) -> &ConditioningSpec {
        &self.conditioning
    }

    pub fn prefix(&self) -> &[TokenId] {
        &self.prefix
    }

    pub fn vocab_hash(&self) -> VocabHash {
        self.vocab_hash
    }

    pub fn is_open(&self) -> bool {
        self.state == SessionState::Open
    }

    /// Distribution for the token at position `prefix().len()`.
    pub fn next_distribution(&mut self) -> Result<TokenDistribution, ScorerError> {
        if self.state != SessionState::Open {
            return Err(ScorerError::SessionClosed);
        }
        let raw = self.backend.score()?;
        TokenDistribution::new(raw, self.vocab_size)
    }

    pub fn append_token(&mut self, id: TokenId) -> Result<(), ScorerError> {
        if self.state != SessionState::Open {
            return Err(ScorerError::SessionClosed);
        }
        if id as usize >= self.vocab_size {
            return Err(ScorerError::TokenOutOfRange { id, size: self.vocab_size });
        }
        self.backend.append(id)?;
        self.prefix.push(id);
        if id == self.eos_id {
            self.state = SessionState::Finished;
        }
        Ok(())
    }

    /// Releases backend resources. Idempotent and best-effort: backend failures are logged, not returned.
    pub fn close(&mut self) {
        if self.state == SessionState::Closed {
            return;
        }
        self.state = SessionState::Closed;
        if let Err(err) = self.backend.close() {
            log::debug!("closing session {}: {err}", self.backend.id());
        }
    }
}

impl Drop for ScorerSession {
    fn drop(&mut self) {
        self.close();
    }
}
