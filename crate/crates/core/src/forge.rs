//! Training data construction: hard-negative mining, false-negative
//! filtering, listwise reranker groups, generated-query quality checks and
//! functional-overlap removal.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{flatten_skill, word_count, FieldCaps, InputFormat, Skill, SkillPool};
use crate::dense::{fnv1a, normalized, VectorIndex};
use crate::error::ProviderError;
use crate::eval::{EvalQuery, RelevanceSet};
use crate::math;
use crate::ranking::{top_k_positions, Retriever};
use crate::sparse::Bm25Index;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForgeError {
    #[error("skill `{0}` is not in the pool")]
    UnknownSkill(String),
    #[error("skill `{0}` has no embedding")]
    MissingEmbedding(String),
    #[error("skill `{0}` is not in the BM25 index")]
    MissingFromBm25(String),
    #[error("query vector has dimension {got}, index has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("query vector is zero or non-finite")]
    DegenerateQuery,
    #[error("need {needed} negatives for `{positive}` but only {available} eligible skills")]
    InsufficientPool {
        positive: String,
        needed: usize,
        available: usize,
    },
    #[error("negative mix must request at least one negative")]
    EmptyMix,
    #[error("retriever failed on query `{query_id}`: {source}")]
    Retriever { query_id: String, source: ProviderError },
    #[error("unknown query style `{0}`")]
    UnknownStyle(String),
    #[error("threshold {0} is outside [0, 1]")]
    Threshold(f64),
}

/// Where a mined negative came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeSource {
    Semantic,
    Lexical,
    Taxonomy,
    Random,
}

impl NegativeSource {
    pub const ORDER: [NegativeSource; 4] = [
        NegativeSource::Semantic,
        NegativeSource::Lexical,
        NegativeSource::Taxonomy,
        NegativeSource::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NegativeSource::Semantic => "semantic",
            NegativeSource::Lexical => "lexical",
            NegativeSource::Taxonomy => "taxonomy",
            NegativeSource::Random => "random",
        }
    }
}

impl fmt::Display for NegativeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-source negative counts and the dense candidate depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeMix {
    pub semantic: usize,
    pub lexical: usize,
    pub taxonomy: usize,
    pub random: usize,
    /// Cosine neighbours considered for semantic and lexical negatives.
    pub candidate_depth: usize,
}

impl Default for NegativeMix {
    fn default() -> Self {
        Self {
            semantic: 4,
            lexical: 3,
            taxonomy: 2,
            random: 1,
            candidate_depth: 50,
        }
    }
}

impl NegativeMix {
    pub fn total(&self) -> usize {
        self.semantic + self.lexical + self.taxonomy + self.random
    }

    pub fn quota(&self, source: NegativeSource) -> usize {
        match source {
            NegativeSource::Semantic => self.semantic,
            NegativeSource::Lexical => self.lexical,
            NegativeSource::Taxonomy => self.taxonomy,
            NegativeSource::Random => self.random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Negative {
    pub skill_id: String,
    pub source: NegativeSource,
}

/// An encoder training record: one query, its positive, mined negatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub query: String,
    pub positive_id: String,
    pub negatives: Vec<Negative>,
    /// Some source ran short and its slots were backfilled.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub flagged: bool,
}

impl TrainingExample {
    pub fn source_counts(&self) -> BTreeMap<NegativeSource, usize> {
        let mut out = BTreeMap::new();
        for n in &self.negatives {
            *out.entry(n.source).or_insert(0) += 1;
        }
        out
    }
}

/// Derives a per-example seed from a run seed and a stable key.
pub fn example_seed(seed: u64, key: &str) -> u64 {
    seed ^ fnv1a(key.as_bytes())
}

fn name_key(name: &str) -> String {
    name.trim().to_lowercase()
}

/// Precomputed lookups for mining many queries against one pool.
pub struct NegativeMiner<'a> {
    pool: &'a SkillPool,
    vectors: &'a VectorIndex,
    bm25: &'a Bm25Index,
    mix: NegativeMix,
    vec_row: Vec<usize>,
    bm25_row: Vec<usize>,
    bm25_to_pool: BTreeMap<usize, usize>,
    names: Vec<String>,
    by_name: BTreeMap<String, Vec<usize>>,
    denied: BTreeSet<usize>,
}

impl<'a> NegativeMiner<'a> {
    /// Every pool skill must have an embedding and a BM25 row.
    pub fn new(
        pool: &'a SkillPool,
        vectors: &'a VectorIndex,
        bm25: &'a Bm25Index,
        mix: NegativeMix,
    ) -> Result<Self, ForgeError> {
        if mix.total() == 0 {
            return Err(ForgeError::EmptyMix);
        }
        let vec_map = vectors.row_map();
        let bm25_map: BTreeMap<&str, usize> = bm25
            .doc_ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut vec_row = Vec::with_capacity(pool.len());
        let mut bm25_row = Vec::with_capacity(pool.len());
        let mut bm25_to_pool = BTreeMap::new();
        let mut names = Vec::with_capacity(pool.len());
        let mut by_name: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in pool.iter().enumerate() {
            vec_row.push(
                *vec_map
                    .get(s.id.as_str())
                    .ok_or_else(|| ForgeError::MissingEmbedding(s.id.clone()))?,
            );
            let b = *bm25_map
                .get(s.id.as_str())
                .ok_or_else(|| ForgeError::MissingFromBm25(s.id.clone()))?;
            bm25_row.push(b);
            bm25_to_pool.insert(b, i);
            let key = name_key(&s.name);
            by_name.entry(key.clone()).or_default().push(i);
            names.push(key);
        }
        Ok(Self {
            pool,
            vectors,
            bm25,
            mix,
            vec_row,
            bm25_row,
            bm25_to_pool,
            names,
            by_name,
            denied: BTreeSet::new(),
        })
    }

    /// Skills that must never be used as negatives (e.g. benchmark labels).
    pub fn with_denylist(mut self, ids: &BTreeSet<String>) -> Self {
        self.denied = ids.iter().filter_map(|id| self.pool.position(id)).collect();
        self
    }

    pub fn mix(&self) -> NegativeMix {
        self.mix
    }

    /// Mines negatives for one (query, positive) pair. `query_vec` is the
    /// query embedding from the same encoder as the index.
    pub fn mine(
        &self,
        query: &str,
        positive_id: &str,
        query_vec: &[f32],
        seed: u64,
    ) -> Result<TrainingExample, ForgeError> {
        let pos = self
            .pool
            .position(positive_id)
            .ok_or_else(|| ForgeError::UnknownSkill(positive_id.to_string()))?;
        if query_vec.len() != self.vectors.dim() {
            return Err(ForgeError::DimensionMismatch {
                expected: self.vectors.dim(),
                got: query_vec.len(),
            });
        }
        let q = normalized(query_vec).ok_or(ForgeError::DegenerateQuery)?;

        let equivalent: BTreeSet<usize> = self.by_name[&self.names[pos]].iter().copied().collect();
        let blocked = |i: usize| equivalent.contains(&i) || self.denied.contains(&i);
        let available = (0..self.pool.len()).filter(|&i| !blocked(i)).count();
        let needed = self.mix.total();
        if available < needed {
            return Err(ForgeError::InsufficientPool {
                positive: positive_id.to_string(),
                needed,
                available,
            });
        }

        let scored: Vec<(f64, usize)> = (0..self.pool.len())
            .filter(|&i| !blocked(i))
            .map(|i| (math::dot(&q, self.vectors.row(self.vec_row[i])), i))
            .collect();
        let dense_top: Vec<usize> = top_k_positions(scored, self.mix.candidate_depth)
            .into_iter()
            .map(|(_, i)| i)
            .collect();

        let category = &self.pool.skills()[pos].category;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen: BTreeSet<usize> = BTreeSet::new();
        let mut negatives = Vec::with_capacity(needed);

        let candidates = |source: NegativeSource, chosen: &BTreeSet<usize>| -> Vec<usize> {
            match source {
                NegativeSource::Semantic => dense_top.iter().copied().filter(|i| !chosen.contains(i)).collect(),
                NegativeSource::Lexical => {
                    let rows: Vec<usize> = dense_top
                        .iter()
                        .filter(|i| !chosen.contains(*i))
                        .map(|&i| self.bm25_row[i])
                        .collect();
                    self.bm25
                        .rank_rows(query, &rows)
                        .into_iter()
                        .filter(|&(_, s)| s > 0.0)
                        .map(|(r, _)| self.bm25_to_pool[&r])
                        .collect()
                }
                NegativeSource::Taxonomy => (0..self.pool.len())
                    .filter(|&i| !blocked(i) && !chosen.contains(&i) && &self.pool.skills()[i].category == category)
                    .collect(),
                NegativeSource::Random => (0..self.pool.len())
                    .filter(|&i| !blocked(i) && !chosen.contains(&i) && &self.pool.skills()[i].category != category)
                    .collect(),
            }
        };

        // Lexical picks are the top BM25 rows; the other sources sample uniformly.
        let take =
            |source: NegativeSource, want: usize, chosen: &mut BTreeSet<usize>, rng: &mut ChaCha8Rng| -> Vec<usize> {
                let pool = candidates(source, chosen);
                let n = want.min(pool.len());
                let picked: Vec<usize> = if source == NegativeSource::Lexical {
                    pool[..n].to_vec()
                } else {
                    sample(rng, pool.len(), n).into_iter().map(|j| pool[j]).collect()
                };
                chosen.extend(picked.iter().copied());
                picked
            };

        let mut deficit = 0usize;
        let mut flagged = false;
        for source in NegativeSource::ORDER {
            let want = self.mix.quota(source) + deficit;
            let got = take(source, want, &mut chosen, &mut rng);
            deficit = want - got.len();
            flagged |= deficit > 0;
            negatives.extend(got.into_iter().map(|i| (i, source)));
        }
        for source in NegativeSource::ORDER {
            if deficit == 0 {
                break;
            }
            let got = take(source, deficit, &mut chosen, &mut rng);
            deficit -= got.len();
            negatives.extend(got.into_iter().map(|i| (i, source)));
        }
        if deficit > 0 {
            return Err(ForgeError::InsufficientPool {
                positive: positive_id.to_string(),
                needed,
                available: needed - deficit,
            });
        }

        Ok(TrainingExample {
            query: query.to_string(),
            positive_id: positive_id.to_string(),
            negatives: negatives
                .into_iter()
                .map(|(i, source)| Negative {
                    skill_id: self.pool.skills()[i].id.clone(),
                    source,
                })
                .collect(),
            flagged,
        })
    }
}

/// One-shot form of [`NegativeMiner::mine`].
#[allow(clippy::too_many_arguments)]
pub fn mine_negatives(
    query: &str,
    positive_id: &str,
    query_vec: &[f32],
    pool: &SkillPool,
    vectors: &VectorIndex,
    bm25: &Bm25Index,
    mix: NegativeMix,
    seed: u64,
) -> Result<TrainingExample, ForgeError> {
    NegativeMiner::new(pool, vectors, bm25, mix)?.mine(query, positive_id, query_vec, seed)
}

/// Shingle unit for body-overlap comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShingleMode {
    #[default]
    Word,
    Char,
}

impl FromStr for ShingleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "word" => Ok(ShingleMode::Word),
            "char" => Ok(ShingleMode::Char),
            other => Err(format!("unknown shingle mode `{other}`")),
        }
    }
}

/// Set of 3-shingles. Word mode: lowercase whitespace tokens; fewer than
/// three tokens give one shingle of the whole sequence.
pub fn trigrams(text: &str, mode: ShingleMode) -> BTreeSet<String> {
    let lower = text.to_lowercase();
    match mode {
        ShingleMode::Word => {
            let tokens: Vec<&str> = lower.split_whitespace().collect();
            if tokens.is_empty() {
                BTreeSet::new()
            } else if tokens.len() < 3 {
                core::iter::once(tokens.join(" ")).collect()
            } else {
                tokens.windows(3).map(|w| w.join(" ")).collect()
            }
        }
        ShingleMode::Char => {
            let chars: Vec<char> = lower.split_whitespace().collect::<Vec<_>>().join(" ").chars().collect();
            if chars.is_empty() {
                BTreeSet::new()
            } else if chars.len() < 3 {
                core::iter::once(chars.iter().collect()).collect()
            } else {
                chars.windows(3).map(|w| w.iter().collect()).collect()
            }
        }
    }
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Word-trigram Jaccard similarity in `[0, 1]`. Two empty texts score 0.
pub fn trigram_jaccard(a: &str, b: &str) -> f64 {
    jaccard(&trigrams(a, ShingleMode::Word), &trigrams(b, ShingleMode::Word))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterThresholds {
    /// Remove when body shingle Jaccard exceeds this.
    pub trigram: f64,
    /// Remove when skill-to-skill cosine exceeds this.
    pub cosine: f64,
    pub shingle: ShingleMode,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            trigram: 0.6,
            cosine: 0.92,
            shingle: ShingleMode::Word,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterLayer {
    Name,
    Trigram,
    Embedding,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub removed_by_name: usize,
    pub removed_by_trigram: usize,
    pub removed_by_embedding: usize,
    pub total_removed: usize,
    pub total_seen: usize,
}

impl FilterReport {
    pub fn record(&mut self, layer: Option<FilterLayer>) {
        self.total_seen += 1;
        match layer {
            Some(FilterLayer::Name) => self.removed_by_name += 1,
            Some(FilterLayer::Trigram) => self.removed_by_trigram += 1,
            Some(FilterLayer::Embedding) => self.removed_by_embedding += 1,
            None => return,
        }
        self.total_removed += 1;
    }

    pub fn merge(&mut self, other: &FilterReport) {
        self.removed_by_name += other.removed_by_name;
        self.removed_by_trigram += other.removed_by_trigram;
        self.removed_by_embedding += other.removed_by_embedding;
        self.total_removed += other.total_removed;
        self.total_seen += other.total_seen;
    }
}

/// Three ordered layers: shared name, body overlap, embedding similarity.
pub struct FalseNegativeFilter<'a> {
    pool: &'a SkillPool,
    vectors: &'a VectorIndex,
    thresholds: FilterThresholds,
    shingles: core::cell::RefCell<BTreeMap<usize, BTreeSet<String>>>,
}

impl<'a> FalseNegativeFilter<'a> {
    pub fn new(
        pool: &'a SkillPool,
        vectors: &'a VectorIndex,
        thresholds: FilterThresholds,
    ) -> Result<Self, ForgeError> {
        for t in [thresholds.trigram, thresholds.cosine] {
            if !(0.0..=1.0).contains(&t) {
                return Err(ForgeError::Threshold(t));
            }
        }
        Ok(Self {
            pool,
            vectors,
            thresholds,
            shingles: core::cell::RefCell::new(BTreeMap::new()),
        })
    }

    fn skill(&self, id: &str) -> Result<(usize, &'a Skill), ForgeError> {
        let pos = self
            .pool
            .position(id)
            .ok_or_else(|| ForgeError::UnknownSkill(id.to_string()))?;
        Ok((pos, &self.pool.skills()[pos]))
    }

    fn row(&self, id: &str) -> Result<usize, ForgeError> {
        self.vectors
            .row_of(id)
            .ok_or_else(|| ForgeError::MissingEmbedding(id.to_string()))
    }

    fn body_jaccard(&self, a: usize, b: usize) -> f64 {
        let mut cache = self.shingles.borrow_mut();
        for p in [a, b] {
            cache
                .entry(p)
                .or_insert_with(|| trigrams(&self.pool.skills()[p].body, self.thresholds.shingle));
        }
        jaccard(&cache[&a], &cache[&b])
    }

    /// First layer that flags `negative` against any ground-truth skill.
    pub fn check(&self, negative: &str, gt: &BTreeSet<String>) -> Result<Option<FilterLayer>, ForgeError> {
        let (neg_pos, neg) = self.skill(negative)?;
        let neg_row = self.row(negative)?;
        let mut gts = Vec::with_capacity(gt.len());
        for g in gt {
            let (p, s) = self.skill(g)?;
            gts.push((p, s, self.row(g)?));
        }
        if gts.iter().any(|(_, s, _)| name_key(&s.name) == name_key(&neg.name)) {
            return Ok(Some(FilterLayer::Name));
        }
        if gts
            .iter()
            .any(|&(p, _, _)| self.body_jaccard(p, neg_pos) > self.thresholds.trigram)
        {
            return Ok(Some(FilterLayer::Trigram));
        }
        if gts
            .iter()
            .any(|&(_, _, r)| self.vectors.cosine_rows(r, neg_row) > self.thresholds.cosine)
        {
            return Ok(Some(FilterLayer::Embedding));
        }
        Ok(None)
    }
}

/// Removes false negatives from mined examples. The ground truth of an
/// example is its positive plus any `gt_lookup` entry for its query text.
pub fn filter_false_negatives(
    examples: Vec<TrainingExample>,
    filter: &FalseNegativeFilter<'_>,
    gt_lookup: &BTreeMap<String, BTreeSet<String>>,
) -> Result<(Vec<TrainingExample>, FilterReport), ForgeError> {
    let mut report = FilterReport::default();
    let mut out = Vec::with_capacity(examples.len());
    for mut ex in examples {
        let mut gt = gt_lookup.get(&ex.query).cloned().unwrap_or_default();
        gt.insert(ex.positive_id.clone());
        let mut kept = Vec::with_capacity(ex.negatives.len());
        for n in ex.negatives {
            let layer = filter.check(&n.skill_id, &gt)?;
            report.record(layer);
            if layer.is_none() {
                kept.push(n);
            }
        }
        ex.negatives = kept;
        out.push(ex);
    }
    Ok((out, report))
}

/// Drops examples whose positive is deny-listed and deny-listed negatives.
pub fn exclude_denied(examples: Vec<TrainingExample>, deny: &BTreeSet<String>) -> (Vec<TrainingExample>, usize) {
    let before = examples.len();
    let kept: Vec<TrainingExample> = examples
        .into_iter()
        .filter(|e| !deny.contains(&e.positive_id))
        .map(|mut e| {
            e.negatives.retain(|n| !deny.contains(&n.skill_id));
            e
        })
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListwiseCandidate {
    pub id: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListwiseGroup {
    pub query: String,
    pub candidates: Vec<ListwiseCandidate>,
}

impl ListwiseGroup {
    pub fn positives(&self) -> usize {
        self.candidates.iter().filter(|c| c.label == 1).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfig {
    /// Candidates per group.
    pub k: usize,
    /// Extra retrieved candidates available to replace filtered ones.
    pub overfetch: usize,
}

impl Default for GroupConfig {
    fn default() -> Self {
        Self { k: 20, overfetch: 20 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupStats {
    pub built: usize,
    /// No ground-truth skill in the retriever's top `k`.
    pub dropped_no_positive: usize,
    /// Too few candidates left after filtering to fill `k`.
    pub dropped_short: usize,
    pub filter: FilterReport,
}

/// Labels each query's retrieved top-`k` against the relevance set. Negatives
/// flagged by `filter` are replaced by the next retrieved candidates.
pub fn build_listwise_groups<R: Retriever + ?Sized>(
    queries: &[EvalQuery],
    retriever: &R,
    config: GroupConfig,
    relevance: &RelevanceSet,
    filter: Option<&FalseNegativeFilter<'_>>,
) -> Result<(Vec<ListwiseGroup>, GroupStats), ForgeError> {
    let mut stats = GroupStats::default();
    let mut groups = Vec::new();
    for q in queries {
        let gt = &relevance
            .get(&q.query_id)
            .ok_or_else(|| ForgeError::UnknownSkill(format!("query {}", q.query_id)))?
            .gt;
        let ranking = retriever
            .retrieve(&q.text, config.k + config.overfetch)
            .map_err(|source| ForgeError::Retriever {
                query_id: q.query_id.clone(),
                source,
            })?;
        if !ranking.ids().take(config.k).any(|id| gt.contains(id)) {
            stats.dropped_no_positive += 1;
            continue;
        }
        let mut candidates = Vec::with_capacity(config.k);
        for id in ranking.ids() {
            if candidates.len() == config.k {
                break;
            }
            let label = u8::from(gt.contains(id));
            if label == 0 {
                if let Some(f) = filter {
                    let layer = f.check(id, gt)?;
                    stats.filter.record(layer);
                    if layer.is_some() {
                        continue;
                    }
                }
            }
            candidates.push(ListwiseCandidate {
                id: id.to_string(),
                label,
            });
        }
        if candidates.len() < config.k {
            stats.dropped_short += 1;
            continue;
        }
        stats.built += 1;
        groups.push(ListwiseGroup {
            query: q.text.clone(),
            candidates,
        });
    }
    Ok((groups, stats))
}

/// Target register of a generated query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryStyle {
    Scenario,
    Developer,
    Indirect,
}

impl QueryStyle {
    pub const ALL: [QueryStyle; 3] = [QueryStyle::Scenario, QueryStyle::Developer, QueryStyle::Indirect];

    /// Inclusive word-count bounds.
    pub fn word_bounds(self) -> (usize, usize) {
        match self {
            QueryStyle::Scenario => (80, 250),
            QueryStyle::Developer => (40, 120),
            QueryStyle::Indirect => (50, 180),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QueryStyle::Scenario => "scenario",
            QueryStyle::Developer => "developer",
            QueryStyle::Indirect => "indirect",
        }
    }
}

impl fmt::Display for QueryStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryStyle {
    type Err = ForgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QueryStyle::ALL
            .into_iter()
            .find(|q| q.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ForgeError::UnknownStyle(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcKind {
    NameLeak,
    CliLeak,
    Length,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcViolation {
    pub kind: QcKind,
    pub detail: String,
}

const SHELL_FENCES: [&str; 8] = ["", "bash", "sh", "shell", "zsh", "console", "terminal", "shell-session"];

// Generic shell verbs whose appearance in a task description says nothing
// about the specific tool.
const GENERIC_COMMANDS: [&str; 38] = [
    "sudo", "cd", "echo", "export", "set", "unset", "source", "if", "then", "else", "fi", "for", "do", "done", "while",
    "exit", "true", "false", "ls", "cat", "cp", "mv", "rm", "mkdir", "touch", "chmod", "pip", "pip3", "npm", "npx",
    "python", "python3", "node", "git", "curl", "wget", "env", "brew",
];

fn command_token(line: &str) -> Option<String> {
    let mut line = line.trim();
    if line.is_empty() || line.starts_with('#') || line.starts_with("//") {
        return None;
    }
    for prompt in ["$ ", "> ", "% "] {
        if let Some(rest) = line.strip_prefix(prompt) {
            line = rest.trim_start();
        }
    }
    let mut tokens = line
        .split_whitespace()
        .skip_while(|t| *t == "sudo" || (t.contains('=') && !t.starts_with('=') && !t.starts_with('-')));
    let first = tokens.next()?;
    let base = first.rsplit('/').next().unwrap_or(first).to_lowercase();
    let base = base.trim_matches(|c: char| !c.is_alphanumeric() && c != '-' && c != '_' && c != '.');
    if base.len() < 2 || !base.chars().any(|c| c.is_alphabetic()) || GENERIC_COMMANDS.contains(&base) {
        return None;
    }
    Some(base.to_string())
}

/// Command names that begin a line inside shell or unlabeled fenced blocks.
pub fn cli_commands(body: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut in_shell: Option<bool> = None;
    for line in body.lines() {
        let t = line.trim_start();
        if let Some(info) = t.strip_prefix("```").or_else(|| t.strip_prefix("~~~")) {
            in_shell = match in_shell {
                Some(_) => None,
                None => {
                    let lang = info.split_whitespace().next().unwrap_or("").to_lowercase();
                    Some(SHELL_FENCES.contains(&lang.as_str()))
                }
            };
            continue;
        }
        if in_shell == Some(true) {
            if let Some(cmd) = command_token(line) {
                out.insert(cmd);
            }
        }
    }
    out
}

fn query_words(query: &str) -> BTreeSet<String> {
    query
        .split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '_' || c == '.'))
        .map(|w| w.trim_matches('.').to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Name leakage, command-name leakage and length compliance of a generated query.
pub fn qc_check(query: &str, skill: &Skill, style: QueryStyle) -> Vec<QcViolation> {
    let mut out = Vec::new();
    let name = skill.name.trim().to_lowercase();
    if !name.is_empty() && query.to_lowercase().contains(&name) {
        out.push(QcViolation {
            kind: QcKind::NameLeak,
            detail: format!("query contains skill name `{}`", skill.name.trim()),
        });
    }
    let words = query_words(query);
    let leaked: Vec<String> = cli_commands(&skill.body)
        .into_iter()
        .filter(|c| words.contains(c))
        .collect();
    if !leaked.is_empty() {
        out.push(QcViolation {
            kind: QcKind::CliLeak,
            detail: format!("query mentions command(s) {}", leaked.join(", ")),
        });
    }
    let n = word_count(query);
    let (lo, hi) = style.word_bounds();
    if n < lo || n > hi {
        out.push(QcViolation {
            kind: QcKind::Length,
            detail: format!("{n} words, {style} queries need {lo}-{hi}"),
        });
    }
    out
}

/// Result of generating one query under quality control.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generated {
    /// The accepted query, if any attempt passed.
    pub text: Option<String>,
    pub attempts: usize,
    /// Violations of the last rejected attempt.
    pub last_violations: Vec<QcViolation>,
    pub provider_errors: Vec<String>,
}

/// Calls `generate(attempt)` until a query passes [`qc_check`] or
/// `max_attempts` is exhausted.
pub fn generate_with_qc<F>(skill: &Skill, style: QueryStyle, max_attempts: usize, mut generate: F) -> Generated
where
    F: FnMut(usize) -> Result<String, ProviderError>,
{
    let mut out = Generated {
        text: None,
        attempts: 0,
        last_violations: Vec::new(),
        provider_errors: Vec::new(),
    };
    for attempt in 0..max_attempts {
        out.attempts = attempt + 1;
        match generate(attempt) {
            Ok(text) => {
                let text = text.trim().to_string();
                let v = qc_check(&text, skill, style);
                if v.is_empty() {
                    out.text = Some(text);
                    out.last_violations.clear();
                    return out;
                }
                out.last_violations = v;
            }
            Err(e) => out.provider_errors.push(e.to_string()),
        }
    }
    out
}

/// A generated benchmark or training query tied to its source skill.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub skill_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<QueryStyle>,
    #[serde(default)]
    pub attempts: usize,
}

/// Decides whether two skills are functionally interchangeable.
pub trait EquivalenceJudge {
    fn equivalent(&self, a: &Skill, b: &Skill) -> Result<bool, ProviderError>;

    fn identity(&self) -> String {
        String::from("equivalence-judge")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupPair {
    pub gt_id: String,
    pub removed_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub gt_id: String,
    pub candidate_id: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct DedupOutcome {
    pub pool: SkillPool,
    pub removed: Vec<DedupPair>,
    pub skipped: Vec<SkippedPair>,
}

/// Judges each ground-truth skill against its BM25 top-`neighbours` pool
/// entries (other ground-truth skills excluded) and removes equivalents.
pub fn remove_functional_duplicates<J: EquivalenceJudge + ?Sized>(
    pool: &SkillPool,
    gt_ids: &BTreeSet<String>,
    bm25: &Bm25Index,
    judge: &J,
    neighbours: usize,
) -> Result<DedupOutcome, ForgeError> {
    let mut removed_ids = BTreeSet::new();
    let mut removed = Vec::new();
    let mut skipped = Vec::new();
    for gt_id in gt_ids {
        let gt = pool.get(gt_id).ok_or_else(|| ForgeError::UnknownSkill(gt_id.clone()))?;
        let query = flatten_skill(gt, InputFormat::Full, &FieldCaps::ENCODER);
        let hits = bm25.search(&query, neighbours + gt_ids.len());
        let cands: Vec<&str> = hits
            .ids()
            .filter(|id| !gt_ids.contains(*id) && pool.contains(id))
            .take(neighbours)
            .collect();
        for cand in cands {
            if removed_ids.contains(cand) {
                continue;
            }
            let other = pool.get(cand).expect("filtered on pool membership");
            match judge.equivalent(gt, other) {
                Ok(true) => {
                    removed_ids.insert(cand.to_string());
                    removed.push(DedupPair {
                        gt_id: gt_id.clone(),
                        removed_id: cand.to_string(),
                    });
                }
                Ok(false) => {}
                Err(e) => skipped.push(SkippedPair {
                    gt_id: gt_id.clone(),
                    candidate_id: cand.to_string(),
                    message: e.to_string(),
                }),
            }
        }
    }
    Ok(DedupOutcome {
        pool: pool.without(&removed_ids),
        removed,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Tier;
    use crate::dense::HashingEmbedder;
    use crate::ranking::Ranking;
    use crate::sparse::{build_bm25, Bm25Params};
    use alloc::vec;

    #[test]
    fn jaccard_hand_cases() {
        assert_eq!(trigram_jaccard("a b c d", "b c d e"), 1.0 / 3.0);
        assert_eq!(trigram_jaccard("run the tests now", "run the tests now"), 1.0);
        assert_eq!(trigram_jaccard("one two three", "four five six"), 0.0);
        assert_eq!(trigram_jaccard("A B", "a b"), 1.0);
        assert_eq!(trigram_jaccard("", ""), 0.0);
        assert_eq!(trigrams("abcd", ShingleMode::Char).len(), 2);
    }

    fn shell_skill() -> Skill {
        Skill::new(
            "s",
            "speech-to-text",
            "transcribe audio",
            "Usage:\n```bash\n# install\n$ sudo whisperx --model base in.wav\nFOO=1 ffmpeg -i a.mp3 a.wav\ncd /tmp\n```\n```python\nimport torch\n```\n",
            "audio",
        )
    }

    #[test]
    fn cli_extraction() {
        let c = cli_commands(&shell_skill().body);
        assert_eq!(c.into_iter().collect::<Vec<_>>(), ["ffmpeg", "whisperx"]);
    }

    fn words(n: usize) -> String {
        vec!["word"; n].join(" ")
    }

    #[test]
    fn qc_cases() {
        let s = shell_skill();
        let leak = format!("I need speech-to-text for my meeting {}", words(40));
        assert_eq!(qc_check(&leak, &s, QueryStyle::Indirect)[0].kind, QcKind::NameLeak);
        assert!(qc_check(&words(117), &s, QueryStyle::Indirect).is_empty());
        let short = qc_check(&words(30), &s, QueryStyle::Developer);
        assert_eq!(short.len(), 1);
        assert_eq!(short[0].kind, QcKind::Length);
        let cli = format!("convert with FFmpeg first {}", words(60));
        assert_eq!(qc_check(&cli, &s, QueryStyle::Developer)[0].kind, QcKind::CliLeak);
        assert!(qc_check(&format!("ffmpegs {}", words(60)), &s, QueryStyle::Developer).is_empty());
    }

    #[test]
    fn regeneration_stops_on_pass() {
        let s = shell_skill();
        let mut calls = 0;
        let g = generate_with_qc(&s, QueryStyle::Developer, 3, |a| {
            calls += 1;
            Ok(if a == 0 { words(10) } else { words(50) })
        });
        assert_eq!((g.attempts, calls), (2, 2));
        assert!(g.text.is_some());
        let never = generate_with_qc(&s, QueryStyle::Developer, 3, |_| Ok(words(5)));
        assert_eq!((never.attempts, never.text), (3, None));
    }

    struct Fixture {
        pool: SkillPool,
        vectors: VectorIndex,
        bm25: Bm25Index,
        emb: HashingEmbedder,
    }

    fn fixture(skills: Vec<Skill>) -> Fixture {
        let pool = SkillPool::new(skills, Tier::Custom).unwrap();
        let emb = HashingEmbedder::new(64);
        let ids = pool.iter().map(|s| s.id.clone()).collect();
        let vecs = pool
            .iter()
            .map(|s| emb.embed_text(&flatten_skill(s, InputFormat::Full, &FieldCaps::ENCODER)))
            .collect();
        let vectors = VectorIndex::from_vectors(ids, vecs).unwrap();
        let bm25 = build_bm25(&pool, &FieldCaps::ENCODER, InputFormat::Full, Bm25Params::default()).unwrap();
        Fixture {
            pool,
            vectors,
            bm25,
            emb,
        }
    }

    fn standard_pool() -> Vec<Skill> {
        let topics = ["pdf", "audio", "git", "image", "sql"];
        let mut skills = Vec::new();
        for (c, topic) in topics.iter().enumerate() {
            for j in 0..8 {
                skills.push(Skill::new(
                    format!("{topic}-{j}"),
                    format!("{topic} tool {j}"),
                    format!("{topic} utility number {j} handles {topic} files"),
                    format!("body of {topic} helper {j} with steps {}", j * 7 + c),
                    *topic,
                ));
            }
        }
        skills
    }

    #[test]
    fn standard_mix_and_determinism() {
        let f = fixture(standard_pool());
        let q = "extract tables from pdf files";
        let qv = f.emb.embed_text(q);
        let miner = NegativeMiner::new(&f.pool, &f.vectors, &f.bm25, NegativeMix::default()).unwrap();
        let ex = miner.mine(q, "pdf-0", &qv, 7).unwrap();
        assert!(!ex.flagged);
        let counts = ex.source_counts();
        assert_eq!(
            NegativeSource::ORDER.map(|s| counts.get(&s).copied().unwrap_or(0)),
            [4, 3, 2, 1]
        );
        let ids: BTreeSet<&str> = ex.negatives.iter().map(|n| n.skill_id.as_str()).collect();
        assert_eq!(ids.len(), 10);
        assert!(!ids.contains("pdf-0"));
        for n in &ex.negatives {
            let cat = &f.pool.get(&n.skill_id).unwrap().category;
            match n.source {
                NegativeSource::Taxonomy => assert_eq!(cat, "pdf"),
                NegativeSource::Random => assert_ne!(cat, "pdf"),
                _ => {}
            }
        }
        assert_eq!(miner.mine(q, "pdf-0", &qv, 7).unwrap(), ex);
    }

    #[test]
    fn lone_category_backfills() {
        let mut skills = standard_pool();
        skills.push(Skill::new("solo", "solo", "lonely pdf thing", "only one", "solo-cat"));
        let f = fixture(skills);
        let qv = f.emb.embed_text("pdf");
        let ex = mine_negatives(
            "pdf",
            "solo",
            &qv,
            &f.pool,
            &f.vectors,
            &f.bm25,
            NegativeMix::default(),
            1,
        )
        .unwrap();
        assert!(ex.flagged);
        assert_eq!(ex.negatives.len(), 10);
        let counts = ex.source_counts();
        assert_eq!(counts.get(&NegativeSource::Taxonomy), None);
        assert_eq!(counts[&NegativeSource::Random], 3);
    }

    #[test]
    fn same_name_is_never_negative() {
        let mut skills = standard_pool();
        skills.push(Skill::new("pdf-0-copy", "PDF Tool 0", "copy", "copy", "pdf"));
        let f = fixture(skills);
        let qv = f.emb.embed_text("pdf tool 0");
        let ex = mine_negatives(
            "pdf tool 0",
            "pdf-0",
            &qv,
            &f.pool,
            &f.vectors,
            &f.bm25,
            NegativeMix::default(),
            3,
        )
        .unwrap();
        assert!(ex.negatives.iter().all(|n| n.skill_id != "pdf-0-copy"));
    }

    #[test]
    fn tiny_pool_rejected() {
        let f = fixture(standard_pool().into_iter().take(8).collect());
        let qv = f.emb.embed_text("pdf");
        let err = mine_negatives(
            "pdf",
            "pdf-0",
            &qv,
            &f.pool,
            &f.vectors,
            &f.bm25,
            NegativeMix::default(),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, ForgeError::InsufficientPool { available: 7, .. }));
    }

    #[test]
    fn filter_layers_in_order() {
        let gt = Skill::new("gt", "alpha", "d", "one two three four five six seven eight", "c");
        let skills = vec![
            gt.clone(),
            Skill::new(
                "same-name",
                "Alpha",
                "d",
                "one two three four five six seven eight",
                "c",
            ),
            Skill::new("copy", "beta", "d", "one two three four five six seven eight", "c"),
            Skill::new("far", "gamma", "d", "nine ten eleven twelve", "c"),
        ];
        let f = fixture(skills);
        let filt = FalseNegativeFilter::new(&f.pool, &f.vectors, FilterThresholds::default()).unwrap();
        let ex = TrainingExample {
            query: "q".into(),
            positive_id: "gt".into(),
            negatives: ["same-name", "copy", "far"]
                .iter()
                .map(|id| Negative {
                    skill_id: id.to_string(),
                    source: NegativeSource::Semantic,
                })
                .collect(),
            flagged: false,
        };
        let (out, rep) = filter_false_negatives(vec![ex], &filt, &BTreeMap::new()).unwrap();
        assert_eq!(out[0].negatives.len(), 1);
        assert_eq!(out[0].negatives[0].skill_id, "far");
        assert_eq!(
            (
                rep.removed_by_name,
                rep.removed_by_trigram,
                rep.removed_by_embedding,
                rep.total_removed,
                rep.total_seen
            ),
            (1, 1, 0, 2, 3)
        );
    }

    #[test]
    fn missing_embedding_named() {
        let pool = SkillPool::new(
            vec![Skill::new("a", "a", "", "", "c"), Skill::new("b", "b", "", "", "c")],
            Tier::Custom,
        )
        .unwrap();
        let vectors = VectorIndex::from_vectors(vec!["a".into()], vec![vec![1.0, 0.0]]).unwrap();
        let filt = FalseNegativeFilter::new(&pool, &vectors, FilterThresholds::default()).unwrap();
        let gt: BTreeSet<String> = ["a".to_string()].into();
        assert_eq!(filt.check("b", &gt), Err(ForgeError::MissingEmbedding("b".into())));
    }

    struct Fixed(Vec<&'static str>);
    impl Retriever for Fixed {
        fn retrieve(&self, _: &str, k: usize) -> Result<Ranking, ProviderError> {
            Ok(self
                .0
                .iter()
                .take(k)
                .map(|id| crate::ScoredHit::new(*id, 0.0))
                .collect())
        }
    }

    #[test]
    fn groups_keep_k_after_replacement() {
        let mut skills: Vec<Skill> = (0..30)
            .map(|i| {
                Skill::new(
                    format!("s{i}"),
                    format!("n{i}"),
                    "d",
                    format!("unique body {i} words here"),
                    "c",
                )
            })
            .collect();
        skills[1] = Skill::new("s1", "n1", "d", "the gold body text for the positive skill", "c");
        skills[4] = Skill::new("s4", "x4", "d", "the gold body text for the positive skill", "c");
        skills[6] = Skill::new("s6", "N1", "d", "whatever", "c");
        let f = fixture(skills);
        let filt = FalseNegativeFilter::new(&f.pool, &f.vectors, FilterThresholds::default()).unwrap();
        let order: Vec<&'static str> = (0..30)
            .map(|i| &*alloc::boxed::Box::leak(format!("s{i}").into_boxed_str()))
            .collect();
        let retr = Fixed(order);
        let rel = RelevanceSet::new([
            crate::eval::QueryRelevance::new("q", ["s1"]),
            crate::eval::QueryRelevance::new("miss", ["s29"]),
        ])
        .unwrap();
        let queries = [
            EvalQuery {
                query_id: "q".into(),
                text: "q".into(),
                tier: None,
            },
            EvalQuery {
                query_id: "miss".into(),
                text: "m".into(),
                tier: None,
            },
        ];
        let (groups, stats) =
            build_listwise_groups(&queries, &retr, GroupConfig::default(), &rel, Some(&filt)).unwrap();
        assert_eq!(groups.len(), 1);
        let g = &groups[0];
        assert_eq!(g.candidates.len(), 20);
        assert_eq!(g.positives(), 1);
        assert_eq!(g.candidates[1].id, "s1");
        assert!(g.candidates.iter().all(|c| c.id != "s4" && c.id != "s6"));
        assert_eq!(g.candidates[19].id, "s21");
        assert_eq!((stats.dropped_no_positive, stats.filter.total_removed), (1, 2));
    }

    struct BodyJudge;
    impl EquivalenceJudge for BodyJudge {
        fn equivalent(&self, a: &Skill, b: &Skill) -> Result<bool, ProviderError> {
            if b.id == "boom" {
                return Err(ProviderError::new("judge", "timeout"));
            }
            Ok(a.body == b.body)
        }
    }

    #[test]
    fn dedup_removes_planted_copies() {
        let mut skills = standard_pool();
        skills.push(Skill::new(
            "copy",
            "renamed",
            "other words",
            skills[0].body.clone(),
            "pdf",
        ));
        skills.push(Skill::new("boom", "pdf tool 0", "pdf utility number 0", "x", "pdf"));
        let f = fixture(skills);
        let gt: BTreeSet<String> = ["pdf-0".to_string()].into();
        let out = remove_functional_duplicates(&f.pool, &gt, &f.bm25, &BodyJudge, 5).unwrap();
        assert_eq!(
            out.removed,
            vec![DedupPair {
                gt_id: "pdf-0".into(),
                removed_id: "copy".into()
            }]
        );
        assert_eq!(out.skipped.len(), 1);
        assert!(out.pool.contains("boom"));
        assert_eq!(out.pool.len(), f.pool.len() - 1);
    }
}
