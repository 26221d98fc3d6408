//! Ranked candidate lists.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use serde::{Deserialize, Serialize};

/// One retrieved skill with the score assigned by the stage that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub skill_id: String,
    pub score: f64,
}

impl ScoredHit {
    pub fn new(skill_id: impl Into<String>, score: f64) -> Self {
        Self {
            skill_id: skill_id.into(),
            score,
        }
    }
}

/// Ordered list of hits for one query, best first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ranking {
    pub hits: Vec<ScoredHit>,
}

impl Ranking {
    pub fn new(hits: Vec<ScoredHit>) -> Self {
        Self { hits }
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.hits.iter().map(|h| h.skill_id.as_str())
    }

    pub fn top(&self) -> Option<&ScoredHit> {
        self.hits.first()
    }

    pub fn contains(&self, skill_id: &str) -> bool {
        self.hits.iter().any(|h| h.skill_id == skill_id)
    }

    /// Keeps the first `k` hits.
    pub fn truncated(&self, k: usize) -> Ranking {
        Ranking::new(self.hits.iter().take(k).cloned().collect())
    }
}

impl FromIterator<ScoredHit> for Ranking {
    fn from_iter<I: IntoIterator<Item = ScoredHit>>(iter: I) -> Self {
        Ranking::new(iter.into_iter().collect())
    }
}

/// Descending score, ascending position on ties. NaN sorts last.
pub(crate) fn by_score_then_position(a: (f64, usize), b: (f64, usize)) -> Ordering {
    match b.0.partial_cmp(&a.0) {
        Some(Ordering::Equal) | None => {
            let nan = (a.0.is_nan(), b.0.is_nan());
            match nan {
                (true, false) => Ordering::Greater,
                (false, true) => Ordering::Less,
                _ => a.1.cmp(&b.1),
            }
        }
        Some(o) => o,
    }
}

/// Selects the top `k` `(score, position)` pairs in ranking order.
pub(crate) fn top_k_positions(scored: Vec<(f64, usize)>, k: usize) -> Vec<(f64, usize)> {
    let mut scored = scored;
    if k < scored.len() {
        scored.select_nth_unstable_by(k, |a, b| by_score_then_position(*a, *b));
        scored.truncate(k);
    }
    scored.sort_unstable_by(|a, b| by_score_then_position(*a, *b));
    scored
}

/// First-stage retriever over a skill pool.
pub trait Retriever {
    /// Up to `k` hits for the raw query text, best first.
    fn retrieve(&self, query: &str, k: usize) -> Result<Ranking, crate::ProviderError>;
}

impl<R: Retriever + ?Sized> Retriever for &R {
    fn retrieve(&self, query: &str, k: usize) -> Result<Ranking, crate::ProviderError> {
        (**self).retrieve(query, k)
    }
}
