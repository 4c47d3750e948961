//! Contract checks any scorer implementation must pass, in-process or remote.
//!
//! * handshake: the advertised vocabulary hash equals the engine's;
//! * normalization: every distribution along a probe path passes the gate;
//! * incremental: scoring after appends matches a fresh session fed the same
//!   prefix, within the normalization tolerance per entry;
//! * isolation: appends to one session leave an interleaved sibling unchanged;
//! * close: closing twice is harmless and a closed session refuses to score.

use super::{ConditioningSpec, Scorer, ScorerError, ScorerSession, NORMALIZATION_TOLERANCE};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckOutcome {
    pub name: &'static str,
    /// `None` on success, otherwise what went wrong.
    pub failure: Option<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConformanceReport {
    pub checks: Vec<CheckOutcome>,
}

impl ConformanceReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckOutcome::passed)
    }

    /// One `PASS name` / `FAIL name: reason` line per check.
    pub fn lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| match &c.failure {
                None => format!("PASS {}", c.name),
                Some(why) => format!("FAIL {}: {why}", c.name),
            })
            .collect()
    }
}

fn scores_along(
    scorer: &dyn Scorer,
    vocab: &Vocabulary,
    cond: &ConditioningSpec,
    path: &[TokenId],
) -> Result<Vec<Vec<f64>>, ScorerError> {
    let mut session = ScorerSession::open(scorer, vocab, cond.clone())?;
    let mut out = Vec::with_capacity(path.len() + 1);
    out.push(session.next_distribution()?.into_inner());
    for &t in path {
        session.append_token(t)?;
        out.push(session.next_distribution()?.into_inner());
    }
    Ok(out)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| if x == y { 0.0 } else { (x - y).abs() })
        .fold(0.0, f64::max)
}

fn check(name: &'static str, f: impl FnOnce() -> Result<Option<String>, ScorerError>) -> CheckOutcome {
    let failure = match f() {
        Ok(failure) => failure,
        Err(err) => Some(err.to_string()),
    };
    CheckOutcome { name, failure }
}

/// Runs every check with `cond` as the session conditioning and `probe` as the
/// token path to append. `probe` must not contain eos.
pub fn run_conformance(scorer: &dyn Scorer, vocab: &Vocabulary, cond: &ConditioningSpec, probe: &[TokenId]) -> ConformanceReport {
    let mut checks = Vec::new();

    checks.push(check("handshake", || {
        let found = scorer.info().vocab_hash;
        Ok((found != vocab.hash()).then(|| format!("scorer vocab {found} != engine vocab {}", vocab.hash())))
    }));

    let incremental = scores_along(scorer, vocab, cond, probe).map_err(|e| e.to_string());
    checks.push(CheckOutcome { name: "normalization", failure: incremental.as_ref().err().cloned() });

    checks.push(check("incremental", || {
        let Ok(steps) = &incremental else { return Ok(Some("no incremental path to compare".into())) };
        for (t, step) in steps.iter().enumerate() {
            let scratch = scores_along(scorer, vocab, cond, &probe[..t])?;
            let diff = max_abs_diff(step, scratch.last().expect("at least one step"));
            if diff > NORMALIZATION_TOLERANCE {
                return Ok(Some(format!("step {t}: incremental and fresh sessions differ by {diff}")));
            }
        }
        Ok(None)
    }));

    checks.push(check("isolation", || {
        let mut a = ScorerSession::open(scorer, vocab, cond.clone())?;
        let mut b = ScorerSession::open(scorer, vocab, cond.clone())?;
        let b_first = b.next_distribution()?.into_inner();
        for &t in probe {
            a.next_distribution()?;
            a.append_token(t)?;
        }
        let b_again = b.next_distribution()?.into_inner();
        let diff = max_abs_diff(&b_first, &b_again);
        Ok((diff > NORMALIZATION_TOLERANCE).then(|| format!("sibling appends moved an idle session by {diff}")))
    }));

    checks.push(check("close", || {
        let mut raw = scorer.open(cond)?;
        raw.score()?;
        raw.close()?;
        raw.close()?;
        let mut s = ScorerSession::open(scorer, vocab, cond.clone())?;
        s.close();
        s.close();
        Ok(match s.next_distribution() {
            Err(ScorerError::SessionClosed) => None,
            other => Some(format!("scoring a closed session returned {other:?}")),
        })
    }));

    ConformanceReport { checks }
}
