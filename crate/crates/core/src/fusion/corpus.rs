use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{greedy_decode, DecodeConfig, DecodeError, DecodeResult};
use crate::context::{DocumentHistory, DEFAULT_WINDOW};
use crate::eval::{Corpus, Segment};
use crate::par::{self, ExecMode};
use crate::prompting::{build_context_spec, Pair, PromptError, PromptSpec, Template};
use crate::scorer::{ConditioningSpec, Scorer};
use crate::vocab::Vocabulary;

/// How a scorer is conditioned on each segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Source sentence as shared-vocab ids.
    Source,
    /// Rendered prompt text.
    Prompt,
}

#[derive(Clone)]
pub struct ScorerSlot {
    pub scorer: Arc<dyn Scorer>,
    pub role: Role,
}

impl ScorerSlot {
    pub fn source(scorer: Arc<dyn Scorer>) -> Self {
        ScorerSlot { scorer, role: Role::Source }
    }

    pub fn prompt(scorer: Arc<dyn Scorer>) -> Self {
        ScorerSlot { scorer, role: Role::Prompt }
    }
}

/// How prompts are rendered for prompt-conditioned scorers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPlan {
    pub template: Template,
    pub src_language: String,
    pub tgt_language: String,
    pub style: Option<String>,
    pub shots: Vec<Pair>,
    /// Context pairs per prompt in [`Template::Context`] mode.
    pub context_size: usize,
}

impl PromptPlan {
    pub fn new(template: Template, src_language: impl Into<String>, tgt_language: impl Into<String>) -> Self {
        PromptPlan {
            template,
            src_language: src_language.into(),
            tgt_language: tgt_language.into(),
            style: None,
            shots: Vec::new(),
            context_size: DEFAULT_WINDOW,
        }
    }

    fn spec_for(&self, segment: &Segment, history: Option<&DocumentHistory>) -> PromptSpec {
        let base = PromptSpec {
            template: self.template,
            src_language: self.src_language.clone(),
            tgt_language: self.tgt_language.clone(),
            style: self.style.clone(),
            shots: self.shots.clone(),
            context: Vec::new(),
            src: segment.src.clone(),
        };
        match (self.template, history) {
            (Template::Context, Some(h)) => build_context_spec(&base, &h.window(self.context_size), self.context_size),
            _ => base,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusOptions {
    /// Abort on the first failed segment instead of recording it.
    pub fail_fast: bool,
    pub exec: ExecMode,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions { fail_fast: false, exec: ExecMode::Parallel }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Ok(DecodeResult),
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResult {
    pub segment_id: String,
    #[serde(flatten)]
    pub outcome: Outcome,
}

impl SegmentResult {
    pub fn hypothesis(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Ok(r) => Some(&r.text),
            Outcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("segment {segment_id}: {source}")]
    Segment {
        segment_id: String,
        #[source]
        source: SegmentError,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum SegmentError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("cancelled after an earlier failure")]
    Cancelled,
}

/// Decodes every segment of `corpus`, returning one result per segment in corpus order.
///
/// Without context prompting every segment is independent. With it, each
/// document is decoded sequentially in document order (later prompts contain
/// earlier outputs) while distinct documents still run concurrently.
pub fn decode_corpus(
    corpus: &Corpus,
    scorers: &[ScorerSlot],
    cfg: &DecodeConfig,
    plan: &PromptPlan,
    vocab: &Vocabulary,
    options: CorpusOptions,
) -> Result<Vec<SegmentResult>, CorpusError> {
    let cancelled = AtomicBool::new(false);
    let segments = corpus.segments();
    let groups: Vec<Vec<usize>> = if plan.template == Template::Context {
        corpus.documents().into_iter().map(|d| d.indices).collect()
    } else {
        (0..segments.len()).map(|i| vec![i]).collect()
    };

    let decoded: Vec<Vec<(usize, Result<DecodeResult, SegmentError>)>> = par::ordered_map(options.exec, &groups, |group| {
        let doc_id = segments[group[0]].doc_id.clone().unwrap_or_default();
        let mut history = DocumentHistory::new(doc_id, plan.context_size);
        group
            .iter()
            .map(|&i| {
                if cancelled.load(Ordering::Relaxed) {
                    return (i, Err(SegmentError::Cancelled));
                }
                let segment = &segments[i];
                let result = decode_segment(segment, scorers, cfg, plan, vocab, &history);
                match &result {
                    Ok(r) => history.record(segment.src.clone(), r.text.clone()),
                    Err(err) => {
                        log::warn!("segment {} failed: {err}", segment.id);
                        if options.fail_fast {
                            cancelled.store(true, Ordering::Relaxed);
                        }
                    }
                }
                (i, result)
            })
            .collect()
    });

    let mut slots: Vec<Option<Result<DecodeResult, SegmentError>>> = (0..segments.len()).map(|_| None).collect();
    for (i, r) in decoded.into_iter().flatten() {
        slots[i] = Some(r);
    }
    if options.fail_fast {
        // Report the earliest real failure in corpus order, not a cancellation.
        let first = slots.iter().position(|s| matches!(s, Some(Err(e)) if !matches!(e, SegmentError::Cancelled)));
        if let Some(i) = first {
            let Some(Err(source)) = slots[i].take() else { unreachable!() };
            return Err(CorpusError::Segment { segment_id: segments[i].id.clone(), source });
        }
    }
    Ok(slots
        .into_iter()
        .zip(segments)
        .map(|(slot, segment)| SegmentResult {
            segment_id: segment.id.clone(),
            outcome: match slot.expect("every segment decoded") {
                Ok(r) => Outcome::Ok(r),
                Err(err) => Outcome::Failed { error: err.to_string() },
            },
        })
        .collect())
}

fn decode_segment(
    segment: &Segment,
    scorers: &[ScorerSlot],
    cfg: &DecodeConfig,
    plan: &PromptPlan,
    vocab: &Vocabulary,
    history: &DocumentHistory,
) -> Result<DecodeResult, SegmentError> {
    let mut conditionings = Vec::with_capacity(scorers.len());
    let mut prompt: Option<String> = None;
    for slot in scorers {
        conditionings.push(match slot.role {
            Role::Source => ConditioningSpec::source(vocab.tokenize(&segment.src).map_err(DecodeError::from)?),
            Role::Prompt => {
                if prompt.is_none() {
                    prompt = Some(plan.spec_for(segment, Some(history)).render()?);
                }
                ConditioningSpec::prompt(prompt.clone().unwrap_or_default())
            }
        });
    }
    let handles: Vec<&dyn Scorer> = scorers.iter().map(|s| s.scorer.as_ref()).collect();
    Ok(greedy_decode(&handles, &conditionings, cfg, vocab)?)
}
