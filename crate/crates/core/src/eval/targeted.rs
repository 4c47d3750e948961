//! Targeted-word accuracy.
//!
//! A hypothesis is correct when any acceptable form occurs in it as whole
//! words: both are split into maximal runs of Unicode alphanumeric characters
//! and the form's words must appear contiguously in the hypothesis. Matching is
//! case-sensitive unless `case_fold` is set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Corpus, MetricError};

/// Phenomenon label for segments that list targets without naming one.
pub const UNLABELLED: &str = "unlabelled";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TargetedOptions {
    pub case_fold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenomenonAccuracy {
    pub phenomenon: String,
    pub correct: usize,
    pub total: usize,
    pub percent: f64,
}

/// Rows sorted by phenomenon name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub rows: Vec<PhenomenonAccuracy>,
}

impl AccuracyTable {
    pub fn get(&self, phenomenon: &str) -> Option<&PhenomenonAccuracy> {
        self.rows.iter().find(|r| r.phenomenon == phenomenon)
    }
}

pub fn words(text: &str) -> Vec<&str> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect()
}

pub fn contains_form(hypothesis: &str, form: &str, case_fold: bool) -> bool {
    let norm = |s: &str| if case_fold { s.to_lowercase() } else { s.to_string() };
    let hyp: Vec<String> = words(hypothesis).into_iter().map(norm).collect();
    let target: Vec<String> = words(form).into_iter().map(norm).collect();
    !target.is_empty() && hyp.windows(target.len()).any(|w| w == target.as_slice())
}

/// Per-phenomenon accuracy over segments that carry target words.
pub fn targeted_accuracy<S: AsRef<str>>(
    corpus: &Corpus,
    hyps: &[S],
    options: TargetedOptions,
) -> Result<AccuracyTable, MetricError> {
    if hyps.len() != corpus.len() {
        return Err(MetricError::LengthMismatch { hyps: hyps.len(), refs: corpus.len() });
    }
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (segment, hyp) in corpus.segments().iter().zip(hyps) {
        if segment.target_words.is_empty() {
            continue;
        }
        let hit = segment.target_words.iter().any(|f| contains_form(hyp.as_ref(), f, options.case_fold));
        let entry = tally.entry(segment.phenomenon.as_deref().unwrap_or(UNLABELLED)).or_default();
        entry.0 += hit as usize;
        entry.1 += 1;
    }
    let rows = tally
        .into_iter()
        .map(|(p, (correct, total))| PhenomenonAccuracy {
            phenomenon: p.to_string(),
            correct,
            total,
            percent: 100.0 * correct as f64 / total as f64,
        })
        .collect();
    Ok(AccuracyTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Segment;

    fn seg(id: &str, phenomenon: &str, forms: &[&str]) -> Segment {
        Segment {
            phenomenon: Some(phenomenon.into()),
            target_words: forms.iter().map(|s| s.to_string()).collect(),
            ..Segment::new(id, "x")
        }
    }

    #[test]
    fn full_token_matches() {
        assert!(contains_form("Dann hat sie gelacht", "sie", false));
        assert!(!contains_form("er würde gehen", "wird", false));
        assert!(!contains_form("Sieben", "Sie", false));
        assert!(contains_form("Er ist, sagte sie.", "sie", false));
        assert!(contains_form("Sie kommt", "sie", true));
        assert!(!contains_form("Sie kommt", "sie", false));
        assert!(contains_form("Er hat es getan", "hat es", false));
        assert!(!contains_form("Er hat nun es", "hat es", false));
        assert!(contains_form("Straße über", "über", false));
    }

    #[test]
    fn per_phenomenon_table() {
        let corpus = Corpus::new(vec![
            seg("1", "gender", &["sie", "Sie"]),
            seg("2", "gender", &["er"]),
            seg("3", "formality", &["Sie"]),
            Segment::new("4", "no targets"),
        ])
        .unwrap();
        let t = targeted_accuracy(&corpus, &["Dann hat sie gelacht", "sie", "du", "x"], TargetedOptions::default()).unwrap();
        let names: Vec<&str> = t.rows.iter().map(|r| r.phenomenon.as_str()).collect();
        assert_eq!(names, ["formality", "gender"]);
        assert_eq!(t.get("gender").unwrap().percent, 50.0);
        assert_eq!(t.get("formality").unwrap().correct, 0);
    }

    #[test]
    fn order_invariant() {
        let a = seg("1", "gender", &["sie"]);
        let b = seg("2", "gender", &["er"]);
        let fwd = targeted_accuracy(&Corpus::new(vec![a.clone(), b.clone()]).unwrap(), &["sie", "nein"], TargetedOptions::default());
        let rev = targeted_accuracy(&Corpus::new(vec![b, a]).unwrap(), &["nein", "sie"], TargetedOptions::default());
        assert_eq!(fwd.unwrap(), rev.unwrap());
    }
}
