//! Inference-time ensembling of a source-conditioned translation scorer and a
//! prompt-conditioned language-model scorer.
//!
//! At every decode step each scorer session returns a full-vocabulary
//! log-distribution; the engine mixes them as
//! `p(t) = λ·p_mt(t) + (1 − λ)·p_lm(t)` (generalised to K weights on the
//! simplex), takes the argmax and feeds the chosen token back to every session.
//!
//! Module map:
//!
//! * [`vocab`]: shared target vocabulary, toy tokenizer, compatibility hash.
//! * [`scorer`]: the scorer/session contract, the JSON-lines wire protocol,
//!   a remote client and a server loop.
//! * [`prompting`]: prompt templates.
//! * [`fusion`]: log-domain mixing, greedy decoding, corpus driver.
//! * [`context`]: per-document rolling history for context prompts.
//! * [`tuning`]: λ grid search with on-disk caching.
//! * [`toy`]: exact in-process scorers, planted tasks and the brute-force oracle.
//! * [`eval`]: corpus ingestion, metrics, targeted-word accuracy, reports.
//!
//! ## Feature flags
//!
//! `parallel` (default) decodes independent segments, or whole
//! documents under context prompting, on a rayon pool. Without
//! it, [`par::ExecMode::Parallel`] runs sequentially with identical output.

pub mod context;
pub mod eval;
pub mod fusion;
pub mod par;
pub mod prompting;
pub mod scorer;
pub mod toy;
pub mod tuning;
pub mod vocab;

pub use fusion::{fuse, greedy_decode, DecodeConfig, DecodeResult};
pub use scorer::{ConditioningSpec, Scorer, ScorerError, ScorerSession, TokenDistribution};
pub use vocab::{TokenId, VocabHash, Vocabulary};
