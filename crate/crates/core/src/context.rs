//! Rolling per-document history of (source, model translation) pairs.

use std::collections::VecDeque;

use crate::prompting::Pair;

pub const DEFAULT_WINDOW: usize = 10;

/// History of one document. Translations recorded here are the engine's own
/// outputs; a failed segment records nothing.
#[derive(Debug, Clone)]
pub struct DocumentHistory {
    doc_id: String,
    pairs: VecDeque<Pair>,
    capacity: usize,
}

impl DocumentHistory {
    pub fn new(doc_id: impl Into<String>, capacity: usize) -> Self {
        DocumentHistory { doc_id: doc_id.into(), pairs: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn record(&mut self, src: impl Into<String>, translation: impl Into<String>) {
        if self.capacity == 0 {
            return;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back(Pair::new(src, translation));
    }

    /// Last `min(n, len)` pairs, oldest first.
    pub fn window(&self, n: usize) -> Vec<Pair> {
        let skip = self.pairs.len().saturating_sub(n);
        self.pairs.iter().skip(skip).cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evicts_oldest() {
        let mut h = DocumentHistory::new("d", 2);
        h.record("a", "ta");
        h.record("b", "tb");
        h.record("c", "tc");
        assert_eq!(h.window(10), vec![Pair::new("b", "tb"), Pair::new("c", "tc")]);
    }

    #[test]
    fn single_record() {
        let mut h = DocumentHistory::new("d", DEFAULT_WINDOW);
        h.record("a", "ta");
        assert_eq!(h.len(), 1);
    }

    #[test]
    fn preserves_order() {
        let mut h = DocumentHistory::new("d", 5);
        for i in 0..4 {
            h.record(format!("s{i}"), format!("t{i}"));
        }
        let srcs: Vec<_> = h.window(5).into_iter().map(|p| p.src).collect();
        assert_eq!(srcs, ["s0", "s1", "s2", "s3"]);
    }

    #[test]
    fn window_bounds() {
        let mut h = DocumentHistory::new("d", 5);
        assert!(h.window(3).is_empty());
        h.record("a", "ta");
        h.record("b", "tb");
        assert!(h.window(0).is_empty());
        assert_eq!(h.window(7).len(), 2);
        assert_eq!(h.window(1), vec![Pair::new("b", "tb")]);
    }

    #[test]
    fn zero_capacity_keeps_nothing() {
        let mut h = DocumentHistory::new("d", 0);
        h.record("a", "ta");
        assert!(h.is_empty());
    }
}
