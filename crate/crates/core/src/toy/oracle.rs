//! Brute-force reference for greedy fused decoding.
//!
//! At every step the oracle recomputes each model's full conditional from the
//! conditioning and the whole prefix (no session state), mixes them in exact
//! rational arithmetic and takes the argmax with lowest-id ties. It shares no
//! code with [`crate::fusion`].

use num_traits::Zero;

use super::Prob;
use crate::scorer::{ConditioningSpec, ScorerError};
use crate::vocab::TokenId;

/// A model whose conditional distribution can be evaluated exactly from scratch.
pub trait ExactModel {
    fn vocab_size(&self) -> usize;
    fn probabilities(&self, conditioning: &ConditioningSpec, prefix: &[TokenId]) -> Result<Vec<Prob>, ScorerError>;
}

/// Greedy path of the exact mixture `Σ_k weights[k] · p_k`, eos excluded.
/// Stops on eos or once `max_len` tokens are emitted.
pub fn oracle_greedy(
    models: &[(&dyn ExactModel, ConditioningSpec)],
    weights: &[Prob],
    eos: TokenId,
    max_len: usize,
) -> Result<Vec<TokenId>, ScorerError> {
    assert_eq!(models.len(), weights.len(), "one weight per model");
    let size = models.first().map_or(0, |(m, _)| m.vocab_size());
    let mut prefix: Vec<TokenId> = Vec::new();
    while prefix.len() < max_len {
        let mut mixed = vec![Prob::zero(); size];
        for ((model, cond), &w) in models.iter().zip(weights) {
            if w.is_zero() {
                continue;
            }
            for (slot, p) in mixed.iter_mut().zip(model.probabilities(cond, &prefix)?) {
                *slot += w * p;
            }
        }
        let mut best = 0;
        for v in 1..size {
            if mixed[v] > mixed[best] {
                best = v;
            }
        }
        if best as TokenId == eos {
            break;
        }
        prefix.push(best as TokenId);
    }
    Ok(prefix)
}
