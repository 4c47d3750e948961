//! Corpus-level metrics.
//!
//! chrF follows the common reference implementation with character order 6,
//! no word n-grams and β = 2:
//!
//! * whitespace is removed from each segment before extracting character n-grams;
//! * for each order n, hypothesis/reference/match counts are summed over the
//!   corpus, where match = Σ min(hyp count, ref count) and the hypothesis count
//!   is taken as 0 when the reference has no n-grams of that order;
//! * per-order precision and recall are averaged over the orders where both
//!   counts are nonzero, and the score is
//!   `100 · (1 + β²)·P·R / (β²·P + R)`, or 0 when `P + R = 0`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::process::Command;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Corpus;

pub const CHRF_CHAR_ORDER: usize = 6;
pub const CHRF_BETA: f64 = 2.0;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("segment {0:?} has no reference")]
    MissingReference(String),
    #[error("external metric {command:?} exited with {status}: {stderr}")]
    External { command: String, status: String, stderr: String },
    #[error("external metric printed {0:?}, expected a single number")]
    BadOutput(String),
    #[error("unknown metric {0:?}")]
    Unknown(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricHandle {
    Chrf,
    ExactMatch,
    TokenAccuracy,
    /// Program and arguments, run without a shell. `{hyp}` and `{ref}` are
    /// replaced by file paths; without placeholders both paths are appended.
    ExternalCommand { argv: Vec<String> },
}

impl MetricHandle {
    pub fn name(&self) -> String {
        match self {
            MetricHandle::Chrf => "chrf".into(),
            MetricHandle::ExactMatch => "exact_match".into(),
            MetricHandle::TokenAccuracy => "token_accuracy".into(),
            MetricHandle::ExternalCommand { argv } => {
                format!("external:{}", argv.first().map(String::as_str).unwrap_or(""))
            }
        }
    }
}

impl fmt::Display for MetricHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for MetricHandle {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chrf" => Ok(MetricHandle::Chrf),
            "exact_match" => Ok(MetricHandle::ExactMatch),
            "token_accuracy" => Ok(MetricHandle::TokenAccuracy),
            other => Err(MetricError::Unknown(other.into())),
        }
    }
}

/// References of every segment, in corpus order.
pub fn references(corpus: &Corpus) -> Result<Vec<String>, MetricError> {
    corpus
        .segments()
        .iter()
        .map(|s| s.reference.clone().ok_or_else(|| MetricError::MissingReference(s.id.clone())))
        .collect()
}

pub fn score<H: AsRef<str>, R: AsRef<str>>(metric: &MetricHandle, hyps: &[H], refs: &[R]) -> Result<f64, MetricError> {
    if !matches!(metric, MetricHandle::ExternalCommand { .. }) && hyps.len() != refs.len() {
        return Err(MetricError::LengthMismatch { hyps: hyps.len(), refs: refs.len() });
    }
    match metric {
        MetricHandle::Chrf => Ok(chrf(hyps, refs)),
        MetricHandle::ExactMatch => Ok(exact_match(hyps, refs)),
        MetricHandle::TokenAccuracy => Ok(token_accuracy(hyps, refs)),
        MetricHandle::ExternalCommand { argv } => external(argv, hyps, refs),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NgramStats {
    pub hyp: u64,
    pub reference: u64,
    pub matched: u64,
}

fn char_ngrams(chars: &[char], n: usize) -> HashMap<&[char], u64> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Per-order statistics for one segment pair.
pub fn chrf_segment_stats(hyp: &str, reference: &str) -> [NgramStats; CHRF_CHAR_ORDER] {
    let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let mut out = [NgramStats::default(); CHRF_CHAR_ORDER];
    for (i, stats) in out.iter_mut().enumerate() {
        let n = i + 1;
        let hc = char_ngrams(&h, n);
        let rc = char_ngrams(&r, n);
        let mut matched = 0;
        let mut hyp_total = 0;
        for (g, &c) in &hc {
            hyp_total += c;
            if let Some(&rcount) = rc.get(g) {
                matched += c.min(rcount);
            }
        }
        *stats = NgramStats {
            hyp: if rc.is_empty() { 0 } else { hyp_total },
            reference: rc.values().sum(),
            matched,
        };
    }
    out
}

pub fn chrf_from_stats(stats: &[NgramStats]) -> f64 {
    let factor = CHRF_BETA * CHRF_BETA;
    let mut avg_prec = 0.0;
    let mut avg_rec = 0.0;
    let mut effective_order = 0;
    for s in stats {
        if s.hyp > 0 && s.reference > 0 {
            avg_prec += s.matched as f64 / s.hyp as f64;
            avg_rec += s.matched as f64 / s.reference as f64;
            effective_order += 1;
        }
    }
    if effective_order == 0 {
        return 0.0;
    }
    avg_prec /= effective_order as f64;
    avg_rec /= effective_order as f64;
    if avg_prec + avg_rec == 0.0 {
        return 0.0;
    }
    100.0 * (1.0 + factor) * avg_prec * avg_rec / (factor * avg_prec + avg_rec)
}

pub fn chrf<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> f64 {
    let mut totals = [NgramStats::default(); CHRF_CHAR_ORDER];
    for (h, r) in hyps.iter().zip(refs) {
        for (t, s) in totals.iter_mut().zip(chrf_segment_stats(h.as_ref(), r.as_ref())) {
            t.hyp += s.hyp;
            t.reference += s.reference;
            t.matched += s.matched;
        }
    }
    chrf_from_stats(&totals)
}

/// Percentage of segments whose hypothesis equals the reference exactly.
pub fn exact_match<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> f64 {
    if hyps.is_empty() {
        return 0.0;
    }
    let hits = hyps.iter().zip(refs).filter(|(h, r)| h.as_ref() == r.as_ref()).count();
    100.0 * hits as f64 / hyps.len() as f64
}

/// Position-wise whitespace-token accuracy, in percent. Each segment
/// contributes `max(|hyp|, |ref|)` positions, so missing and extra tokens both count as errors.
pub fn token_accuracy<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (h, r) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.as_ref().split_whitespace().collect();
        let r: Vec<&str> = r.as_ref().split_whitespace().collect();
        correct += h.iter().zip(&r).filter(|(a, b)| a == b).count();
        total += h.len().max(r.len());
    }
    if total == 0 {
        return 0.0;
    }
    100.0 * correct as f64 / total as f64
}

fn external<H: AsRef<str>, R: AsRef<str>>(argv: &[String], hyps: &[H], refs: &[R]) -> Result<f64, MetricError> {
    let dir = tempfile::tempdir()?;
    let hyp_path = dir.path().join("hyp.txt");
    let ref_path = dir.path().join("ref.txt");
    let join = |xs: Vec<&str>| xs.iter().map(|x| format!("{x}\n")).collect::<String>();
    fs::write(&hyp_path, join(hyps.iter().map(AsRef::as_ref).collect()))?;
    fs::write(&ref_path, join(refs.iter().map(AsRef::as_ref).collect()))?;

    let (hyp_arg, ref_arg) = (hyp_path.display().to_string(), ref_path.display().to_string());
    let has_placeholders = argv.iter().any(|a| a.contains("{hyp}") || a.contains("{ref}"));
    let mut args: Vec<String> = argv.iter().map(|a| a.replace("{hyp}", &hyp_arg).replace("{ref}", &ref_arg)).collect();
    if !has_placeholders {
        args.push(hyp_arg);
        args.push(ref_arg);
    }
    let (program, rest) = args.split_first().ok_or_else(|| MetricError::Unknown("empty external command".into()))?;
    let output = Command::new(program).args(rest).output()?;
    if !output.status.success() {
        return Err(MetricError::External {
            command: argv.join(" "),
            status: output.status.to_string(),
            stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        });
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    stdout.trim().parse::<f64>().map_err(|_| MetricError::BadOutput(stdout.trim().to_string()))
}
