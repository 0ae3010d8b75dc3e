//! Ordered `(doc_id, score)` lists shared by localization, re-ranking and evaluation.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub doc_id: String,
    pub score: f64,
}

/// Scores sorted non-increasing, doc ids unique, ties broken by doc id ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub query_id: String,
    pub entries: Vec<RankEntry>,
}

impl Ranking {
    /// Builds a ranking from unordered scores. Later duplicates of a doc id
    /// are dropped.
    pub fn from_scores<I>(query_id: impl Into<String>, scores: I) -> Self
    where
        I: IntoIterator<Item = (String, f64)>,
    {
        let mut seen = std::collections::BTreeSet::new();
        let mut entries: Vec<RankEntry> = scores
            .into_iter()
            .filter(|(id, _)| seen.insert(id.clone()))
            .map(|(doc_id, score)| RankEntry { doc_id, score })
            .collect();
        entries.sort_by(rank_order);
        Ranking {
            query_id: query_id.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn score_of(&self, doc_id: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.doc_id == doc_id)
            .map(|e| e.score)
    }

    /// 1-based rank of `doc_id`.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.doc_id == doc_id)
            .map(|p| p + 1)
    }

    pub fn truncate(&mut self, n: usize) {
        self.entries.truncate(n);
    }

    /// Min-max normalized scores in ranking order. A constant ranking maps
    /// every entry to 0.5.
    pub fn min_max_normalized(&self) -> Vec<(String, f64)> {
        let (lo, hi) = self
            .entries
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
                (lo.min(e.score), hi.max(e.score))
            });
        let span = hi - lo;
        self.entries
            .iter()
            .map(|e| {
                let v = if span > 0.0 { (e.score - lo) / span } else { 0.5 };
                (e.doc_id.clone(), v)
            })
            .collect()
    }

    pub fn is_well_ordered(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| rank_order(&w[0], &w[1]) == Ordering::Less)
    }
}

fn rank_order(a: &RankEntry, b: &RankEntry) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_by_doc_id() {
        let r = Ranking::from_scores(
            "q",
            vec![("b".into(), 1.0), ("a".into(), 1.0), ("c".into(), 2.0)],
        );
        assert_eq!(r.doc_ids().collect::<Vec<_>>(), ["c", "a", "b"]);
        assert!(r.is_well_ordered());
        assert_eq!(r.rank_of("b"), Some(3));
    }

    #[test]
    fn constant_ranking_normalizes_to_half() {
        let r = Ranking::from_scores("q", vec![("a".into(), 3.0), ("b".into(), 3.0)]);
        assert!(r.min_max_normalized().iter().all(|(_, v)| *v == 0.5));
    }
}
