//! Routing metrics, run aggregation, reranker contribution decomposition,
//! top-K ablation and description-length stratification.
//!
//! For a query with ground-truth set `G`:
//!
//! - Hit@1: 1 if the rank-1 skill is in `G`.
//! - MRR@10: reciprocal rank of the best-ranked member of `G` within the top 10.
//! - R@K: `|G ∩ top-K| / |G|`, over the available depth when the ranking is shorter.
//! - FC@10: 1 if all of `G` is in the top 10.
//!
//! Aggregates are unweighted means over queries; the tier average is the
//! unweighted mean of the per-tier means.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{nearest_rank_sorted, word_count, SkillPool};
use crate::ranking::{Ranking, Retriever};
use crate::rerank::{apply_stage, RerankStage};

/// Tier label used when neither the run nor the relevance record has one.
pub const DEFAULT_TIER: &str = "all";

pub fn hit_at_1(ranking: &Ranking, gt: &BTreeSet<String>) -> u8 {
    ranking.top().map_or(0, |h| u8::from(gt.contains(&h.skill_id)))
}

pub fn mrr_at_10(ranking: &Ranking, gt: &BTreeSet<String>) -> f64 {
    ranking
        .ids()
        .take(10)
        .position(|id| gt.contains(id))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

pub fn recall_at_k(ranking: &Ranking, gt: &BTreeSet<String>, k: usize) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    let found: BTreeSet<&str> = ranking.ids().take(k).filter(|id| gt.contains(*id)).collect();
    found.len() as f64 / gt.len() as f64
}

pub fn fc_at_10(ranking: &Ranking, gt: &BTreeSet<String>) -> u8 {
    let top: BTreeSet<&str> = ranking.ids().take(10).collect();
    u8::from(!gt.is_empty() && gt.iter().all(|g| top.contains(g.as_str())))
}

/// Ground truth and strata labels for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRelevance {
    pub query_id: String,
    pub gt: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<String>,
    /// Free-form extra strata, e.g. `{"source": "synthetic"}`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub strata: BTreeMap<String, String>,
}

impl QueryRelevance {
    pub fn new(query_id: impl Into<String>, gt: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            query_id: query_id.into(),
            gt: gt.into_iter().map(Into::into).collect(),
            tier: None,
            difficulty: None,
            strata: BTreeMap::new(),
        }
    }

    pub fn is_single(&self) -> bool {
        self.gt.len() == 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("query `{0}` has an empty ground-truth set")]
    EmptyGroundTruth(String),
    #[error("duplicate relevance entry for query `{0}`")]
    DuplicateRelevance(String),
    #[error("run references unknown query `{0}`")]
    UnknownQuery(String),
    #[error("query `{query_id}` appears twice in tier `{tier}`")]
    DuplicateRun { tier: String, query_id: String },
    #[error("runs cover different queries: {0}")]
    MismatchedQueries(String),
    #[error("ground-truth skill `{0}` is not in the pool")]
    GtMissingFromPool(String),
    #[error("pipeline failed on query `{query_id}`: {message}")]
    Pipeline { query_id: String, message: String },
}

/// Ground truth for a benchmark, keyed by query id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelevanceSet {
    queries: BTreeMap<String, QueryRelevance>,
}

impl RelevanceSet {
    pub fn new(entries: impl IntoIterator<Item = QueryRelevance>) -> Result<Self, EvalError> {
        let mut queries = BTreeMap::new();
        for e in entries {
            if e.gt.is_empty() {
                return Err(EvalError::EmptyGroundTruth(e.query_id));
            }
            if queries.contains_key(&e.query_id) {
                return Err(EvalError::DuplicateRelevance(e.query_id));
            }
            queries.insert(e.query_id.clone(), e);
        }
        Ok(Self { queries })
    }

    pub fn get(&self, query_id: &str) -> Option<&QueryRelevance> {
        self.queries.get(query_id)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueryRelevance> {
        self.queries.values()
    }
}

/// One query's ranking within a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRun {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<String>,
    pub ranking: Ranking,
}

impl QueryRun {
    pub fn new(query_id: impl Into<String>, ranking: Ranking) -> Self {
        Self {
            query_id: query_id.into(),
            tier: None,
            ranking,
        }
    }

    pub fn with_tier(mut self, tier: impl Into<String>) -> Self {
        self.tier = Some(tier.into());
        self
    }
}

/// Per-query metric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub tier: String,
    pub hit_at_1: u8,
    pub mrr_at_10: f64,
    pub recall_at_10: f64,
    pub recall_at_20: f64,
    pub recall_at_50: f64,
    pub fc_at_10: u8,
    pub depth: usize,
    /// Ranking was empty; every metric is zero.
    pub empty: bool,
}

impl QueryMetrics {
    pub fn compute(query_id: &str, tier: &str, ranking: &Ranking, gt: &BTreeSet<String>) -> Self {
        Self {
            query_id: query_id.to_string(),
            tier: tier.to_string(),
            hit_at_1: hit_at_1(ranking, gt),
            mrr_at_10: mrr_at_10(ranking, gt),
            recall_at_10: recall_at_k(ranking, gt, 10),
            recall_at_20: recall_at_k(ranking, gt, 20),
            recall_at_50: recall_at_k(ranking, gt, 50),
            fc_at_10: fc_at_10(ranking, gt),
            depth: ranking.len(),
            empty: ranking.is_empty(),
        }
    }
}

/// Mean metrics over a set of queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub queries: usize,
    pub hit_at_1: f64,
    pub mrr_at_10: f64,
    pub recall_at_10: f64,
    pub recall_at_20: f64,
    pub recall_at_50: f64,
    pub fc_at_10: f64,
    /// Shallowest ranking in the set; R@K cells with K above this were
    /// computed over the available depth only.
    pub min_depth: usize,
}

impl MetricSet {
    pub fn mean<'a>(rows: impl IntoIterator<Item = &'a QueryMetrics>) -> Self {
        let mut n = 0usize;
        let mut sums = [0f64; 6];
        let mut min_depth = usize::MAX;
        for m in rows {
            n += 1;
            sums[0] += f64::from(m.hit_at_1);
            sums[1] += m.mrr_at_10;
            sums[2] += m.recall_at_10;
            sums[3] += m.recall_at_20;
            sums[4] += m.recall_at_50;
            sums[5] += f64::from(m.fc_at_10);
            min_depth = min_depth.min(m.depth);
        }
        let d = if n == 0 { 1.0 } else { n as f64 };
        Self {
            queries: n,
            hit_at_1: sums[0] / d,
            mrr_at_10: sums[1] / d,
            recall_at_10: sums[2] / d,
            recall_at_20: sums[3] / d,
            recall_at_50: sums[4] / d,
            fc_at_10: sums[5] / d,
            min_depth: if n == 0 { 0 } else { min_depth },
        }
    }

    /// Unweighted mean of several sets (the tier average).
    pub fn average(sets: &[&MetricSet]) -> Self {
        let n = sets.len().max(1) as f64;
        let avg = |f: fn(&MetricSet) -> f64| sets.iter().map(|s| f(s)).sum::<f64>() / n;
        Self {
            queries: sets.iter().map(|s| s.queries).sum(),
            hit_at_1: avg(|s| s.hit_at_1),
            mrr_at_10: avg(|s| s.mrr_at_10),
            recall_at_10: avg(|s| s.recall_at_10),
            recall_at_20: avg(|s| s.recall_at_20),
            recall_at_50: avg(|s| s.recall_at_50),
            fc_at_10: avg(|s| s.fc_at_10),
            min_depth: sets.iter().map(|s| s.min_depth).min().unwrap_or(0),
        }
    }

    /// Whether R@`k` was computed on rankings shorter than `k`.
    pub fn depth_limited(&self, k: usize) -> bool {
        self.min_depth < k
    }
}

/// Aggregated evaluation of one or more tier runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean over every evaluated (tier, query) instance.
    pub overall: MetricSet,
    pub tiers: BTreeMap<String, MetricSet>,
    /// Unweighted mean of the tier means.
    pub tier_average: MetricSet,
    /// Dimension → label → metrics, pooled over tiers.
    pub strata: BTreeMap<String, BTreeMap<String, MetricSet>>,
    pub per_query: Vec<QueryMetrics>,
    /// Relevance queries absent from a tier's run, as `(tier, query_id)`.
    pub missing: Vec<(String, String)>,
    /// Queries whose ranking was empty, as `(tier, query_id)`.
    pub empty_rankings: Vec<(String, String)>,
}

/// Extra per-query labels (e.g. description quartiles) to stratify by.
pub type ExternalStrata<'a> = (&'a str, &'a BTreeMap<String, String>);

fn tier_of(run: &QueryRun, rel: &QueryRelevance) -> String {
    run.tier
        .clone()
        .or_else(|| rel.tier.clone())
        .unwrap_or_else(|| DEFAULT_TIER.to_string())
}

/// Scores every run entry against the relevance set and aggregates.
pub fn evaluate_run(
    runs: &[QueryRun],
    relevance: &RelevanceSet,
    external: &[ExternalStrata<'_>],
) -> Result<MetricsReport, EvalError> {
    let mut by_key: BTreeMap<(String, String), &QueryRun> = BTreeMap::new();
    for run in runs {
        let rel = relevance
            .get(&run.query_id)
            .ok_or_else(|| EvalError::UnknownQuery(run.query_id.clone()))?;
        let tier = tier_of(run, rel);
        if by_key.insert((tier.clone(), run.query_id.clone()), run).is_some() {
            return Err(EvalError::DuplicateRun {
                tier,
                query_id: run.query_id.clone(),
            });
        }
    }

    let per_query: Vec<QueryMetrics> = by_key
        .iter()
        .map(|((tier, qid), run)| {
            let rel = relevance.get(qid).expect("checked above");
            QueryMetrics::compute(qid, tier, &run.ranking, &rel.gt)
        })
        .collect();

    let tier_names: BTreeSet<&String> = by_key.keys().map(|(t, _)| t).collect();
    let mut missing = Vec::new();
    for tier in &tier_names {
        for rel in relevance.iter() {
            // a query pinned to a tier is only expected there
            if rel.tier.as_ref().is_some_and(|t| t != *tier) {
                continue;
            }
            if !by_key.contains_key(&((*tier).clone(), rel.query_id.clone())) {
                missing.push(((*tier).clone(), rel.query_id.clone()));
            }
        }
    }

    let tiers: BTreeMap<String, MetricSet> = tier_names
        .iter()
        .map(|t| {
            (
                (*t).clone(),
                MetricSet::mean(per_query.iter().filter(|m| &m.tier == *t)),
            )
        })
        .collect();
    let tier_refs: Vec<&MetricSet> = tiers.values().collect();
    let tier_average = MetricSet::average(&tier_refs);

    let mut labels: Vec<BTreeMap<String, String>> = Vec::with_capacity(per_query.len());
    for m in &per_query {
        let rel = relevance.get(&m.query_id).expect("checked above");
        let mut l = BTreeMap::new();
        l.insert(
            "cardinality".to_string(),
            if rel.is_single() { "single" } else { "multi" }.to_string(),
        );
        if let Some(d) = &rel.difficulty {
            l.insert("difficulty".to_string(), d.clone());
        }
        for (k, v) in &rel.strata {
            l.insert(k.clone(), v.clone());
        }
        for (dim, map) in external {
            if let Some(v) = map.get(&m.query_id) {
                l.insert((*dim).to_string(), v.clone());
            }
        }
        labels.push(l);
    }
    let mut groups: BTreeMap<String, BTreeMap<String, Vec<usize>>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        for (dim, v) in l {
            groups
                .entry(dim.clone())
                .or_default()
                .entry(v.clone())
                .or_default()
                .push(i);
        }
    }
    let strata = groups
        .into_iter()
        .map(|(dim, vals)| {
            let sets = vals
                .into_iter()
                .map(|(v, idx)| (v, MetricSet::mean(idx.iter().map(|&i| &per_query[i]))))
                .collect();
            (dim, sets)
        })
        .collect();

    let empty_rankings = per_query
        .iter()
        .filter(|m| m.empty)
        .map(|m| (m.tier.clone(), m.query_id.clone()))
        .collect();

    Ok(MetricsReport {
        overall: MetricSet::mean(&per_query),
        tiers,
        tier_average,
        strata,
        per_query,
        missing,
        empty_rankings,
    })
}

/// Per-query Hit@1 transitions between an encoder-only run and a pipeline run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionCounts {
    pub both_correct: usize,
    pub fixed: usize,
    pub degraded: usize,
    pub both_missed: usize,
}

impl DecompositionCounts {
    pub fn total(&self) -> usize {
        self.both_correct + self.fixed + self.degraded + self.both_missed
    }

    pub fn encoder_hits(&self) -> usize {
        self.both_correct + self.degraded
    }

    pub fn pipeline_hits(&self) -> usize {
        self.both_correct + self.fixed
    }

    fn add(&mut self, encoder: u8, pipeline: u8) {
        match (encoder, pipeline) {
            (1, 1) => self.both_correct += 1,
            (0, 1) => self.fixed += 1,
            (1, 0) => self.degraded += 1,
            _ => self.both_missed += 1,
        }
    }

    /// Reconstructs the four buckets from aggregate totals.
    pub fn from_totals(
        total: usize,
        encoder_hits: usize,
        pipeline_hits: usize,
        fixed: usize,
        degraded: usize,
    ) -> Option<Self> {
        let both_correct = encoder_hits.checked_sub(degraded)?;
        if both_correct + fixed != pipeline_hits {
            return None;
        }
        let both_missed = total.checked_sub(both_correct + fixed + degraded)?;
        Some(Self {
            both_correct,
            fixed,
            degraded,
            both_missed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    pub all: DecompositionCounts,
    pub tiers: BTreeMap<String, DecompositionCounts>,
}

fn index_runs<'a>(
    runs: &'a [QueryRun],
    relevance: &RelevanceSet,
) -> Result<BTreeMap<(String, String), &'a QueryRun>, EvalError> {
    let mut out = BTreeMap::new();
    for run in runs {
        let rel = relevance
            .get(&run.query_id)
            .ok_or_else(|| EvalError::UnknownQuery(run.query_id.clone()))?;
        let tier = tier_of(run, rel);
        if out.insert((tier.clone(), run.query_id.clone()), run).is_some() {
            return Err(EvalError::DuplicateRun {
                tier,
                query_id: run.query_id.clone(),
            });
        }
    }
    Ok(out)
}

pub fn decompose(
    encoder: &[QueryRun],
    pipeline: &[QueryRun],
    relevance: &RelevanceSet,
) -> Result<Decomposition, EvalError> {
    let enc = index_runs(encoder, relevance)?;
    let pipe = index_runs(pipeline, relevance)?;
    if let Some((t, q)) = enc.keys().find(|k| !pipe.contains_key(*k)) {
        return Err(EvalError::MismatchedQueries(alloc::format!(
            "{t}/{q} only in encoder run"
        )));
    }
    if let Some((t, q)) = pipe.keys().find(|k| !enc.contains_key(*k)) {
        return Err(EvalError::MismatchedQueries(alloc::format!(
            "{t}/{q} only in pipeline run"
        )));
    }
    let mut all = DecompositionCounts::default();
    let mut tiers: BTreeMap<String, DecompositionCounts> = BTreeMap::new();
    for (key, e) in &enc {
        let gt = &relevance.get(&key.1).expect("indexed").gt;
        let eh = hit_at_1(&e.ranking, gt);
        let ph = hit_at_1(&pipe[key].ranking, gt);
        all.add(eh, ph);
        tiers.entry(key.0.clone()).or_default().add(eh, ph);
    }
    Ok(Decomposition { all, tiers })
}

/// A query to run through a pipeline during evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub query_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<String>,
}

/// Retriever coverage at one candidate depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallPoint {
    pub k: usize,
    /// Mean R@k of the retriever.
    pub recall: f64,
    /// Fraction of queries with any ground-truth skill in the top k.
    pub any_hit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub k: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// Retriever R@k for k = 1..=max K.
    pub recall_curve: Vec<RecallPoint>,
}

/// Runs the pipeline once per candidate depth over identical queries.
pub fn topk_ablation<R: Retriever + ?Sized>(
    queries: &[EvalQuery],
    retriever: &R,
    stage: &RerankStage<'_>,
    pool: &SkillPool,
    ks: &[usize],
    relevance: &RelevanceSet,
) -> Result<AblationTable, EvalError> {
    let max_k = ks.iter().copied().max().unwrap_or(0);
    let mut retrieved = Vec::with_capacity(queries.len());
    for q in queries {
        let rel = relevance
            .get(&q.query_id)
            .ok_or_else(|| EvalError::UnknownQuery(q.query_id.clone()))?;
        let r = retriever
            .retrieve(&q.text, max_k.max(1))
            .map_err(|e| EvalError::Pipeline {
                query_id: q.query_id.clone(),
                message: e.to_string(),
            })?;
        retrieved.push((q, rel, r));
    }

    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut runs = Vec::with_capacity(queries.len());
        for (q, _, r) in &retrieved {
            let top = r.truncated(k);
            let (ranking, _) = apply_stage(&q.text, &top, pool, stage).map_err(|e| EvalError::Pipeline {
                query_id: q.query_id.clone(),
                message: e.to_string(),
            })?;
            let mut run = QueryRun::new(q.query_id.clone(), ranking);
            run.tier = q.tier.clone();
            runs.push(run);
        }
        rows.push(AblationRow {
            k,
            report: evaluate_run(&runs, relevance, &[])?,
        });
    }

    let n = retrieved.len().max(1) as f64;
    let recall_curve = (1..=max_k)
        .map(|k| {
            let (mut recall, mut any) = (0.0, 0.0);
            for (_, rel, r) in &retrieved {
                recall += recall_at_k(r, &rel.gt, k);
                if r.ids().take(k).any(|id| rel.gt.contains(id)) {
                    any += 1.0;
                }
            }
            RecallPoint {
                k,
                recall: recall / n,
                any_hit: any / n,
            }
        })
        .collect();
    Ok(AblationTable { rows, recall_curve })
}

/// Quartile of a description word count given the three cut points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quartile {
    Q1,
    Q2,
    Q3,
    Q4,
}

impl Quartile {
    pub fn label(self) -> &'static str {
        match self {
            Quartile::Q1 => "Q1",
            Quartile::Q2 => "Q2",
            Quartile::Q3 => "Q3",
            Quartile::Q4 => "Q4",
        }
    }

    pub fn of(words: usize, cuts: [usize; 3]) -> Self {
        if words <= cuts[0] {
            Quartile::Q1
        } else if words <= cuts[1] {
            Quartile::Q2
        } else if words <= cuts[2] {
            Quartile::Q3
        } else {
            Quartile::Q4
        }
    }
}

/// Description-length strata over the ground-truth skills of a benchmark.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuartileStrata {
    /// Upper bounds (inclusive) of Q1, Q2 and Q3, in words.
    pub cuts: [usize; 3],
    /// Two or more cut points coincide.
    pub degenerate: bool,
    pub per_skill: BTreeMap<String, Quartile>,
    /// Each query labelled by its ground-truth skill with the longest description.
    pub per_query: BTreeMap<String, Quartile>,
    /// Queries with one label per ground-truth skill.
    pub per_query_skill: BTreeMap<String, Vec<(String, Quartile)>>,
}

impl QuartileStrata {
    pub fn query_labels(&self) -> BTreeMap<String, String> {
        self.per_query
            .iter()
            .map(|(q, l)| (q.clone(), l.label().to_string()))
            .collect()
    }
}

/// Cut points are the nearest-rank 25th/50th/75th percentiles of the word
/// counts of distinct ground-truth skills with a non-empty description.
pub fn quartile_stratify(relevance: &RelevanceSet, pool: &SkillPool) -> Result<QuartileStrata, EvalError> {
    let mut words: BTreeMap<String, usize> = BTreeMap::new();
    for rel in relevance.iter() {
        for g in &rel.gt {
            let skill = pool.get(g).ok_or_else(|| EvalError::GtMissingFromPool(g.clone()))?;
            if !skill.description.trim().is_empty() {
                words.insert(g.clone(), word_count(&skill.description));
            }
        }
    }
    let mut sorted: Vec<usize> = words.values().copied().collect();
    sorted.sort_unstable();
    let cuts = if sorted.is_empty() {
        [0, 0, 0]
    } else {
        [
            nearest_rank_sorted(&sorted, 25.0),
            nearest_rank_sorted(&sorted, 50.0),
            nearest_rank_sorted(&sorted, 75.0),
        ]
    };
    let degenerate = cuts[0] == cuts[1] || cuts[1] == cuts[2];
    let per_skill: BTreeMap<String, Quartile> = words
        .iter()
        .map(|(id, &w)| (id.clone(), Quartile::of(w, cuts)))
        .collect();
    let mut per_query = BTreeMap::new();
    let mut per_query_skill = BTreeMap::new();
    for rel in relevance.iter() {
        let labelled: Vec<(String, Quartile)> = rel
            .gt
            .iter()
            .filter_map(|g| per_skill.get(g).map(|q| (g.clone(), *q)))
            .collect();
        if let Some((best, _)) = rel
            .gt
            .iter()
            .filter_map(|g| words.get(g).map(|w| (g, *w)))
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)))
        {
            per_query.insert(rel.query_id.clone(), per_skill[best]);
        }
        if !labelled.is_empty() {
            per_query_skill.insert(rel.query_id.clone(), labelled);
        }
    }
    Ok(QuartileStrata {
        cuts,
        degenerate,
        per_skill,
        per_query,
        per_query_skill,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Skill, Tier};
    use crate::ranking::ScoredHit;
    use alloc::vec;

    fn r(ids: &[&str]) -> Ranking {
        ids.iter().map(|id| ScoredHit::new(*id, 0.0)).collect()
    }

    fn gt(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn padded(prefix: &[&str], total: usize) -> Ranking {
        let mut ids: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
        while ids.len() < total {
            ids.push(alloc::format!("x{}", ids.len()));
        }
        ids.into_iter().map(|id| ScoredHit::new(id, 0.0)).collect()
    }

    #[test]
    fn hit_cases() {
        assert_eq!(hit_at_1(&r(&["a", "b"]), &gt(&["a"])), 1);
        assert_eq!(hit_at_1(&r(&["b", "a"]), &gt(&["a", "b"])), 1);
        assert_eq!(hit_at_1(&r(&["c", "a"]), &gt(&["a"])), 0);
        assert_eq!(hit_at_1(&Ranking::default(), &gt(&["a"])), 0);
    }

    #[test]
    fn mrr_cases() {
        let mut ids = vec!["x", "y", "z", "g"];
        assert_eq!(mrr_at_10(&r(&ids), &gt(&["g"])), 0.25);
        ids = vec!["x", "y", "g1", "z", "w", "v", "g2"];
        assert_eq!(mrr_at_10(&r(&ids), &gt(&["g1", "g2"])), 1.0 / 3.0);
        assert_eq!(mrr_at_10(&padded(&[], 20), &gt(&["g"])), 0.0);
        let mut late = padded(&[], 10);
        late.hits.push(ScoredHit::new("g", 0.0));
        assert_eq!(mrr_at_10(&late, &gt(&["g"])), 0.0);
    }

    #[test]
    fn recall_cases() {
        let top = padded(&["a", "x", "c"], 10);
        assert_eq!(recall_at_k(&top, &gt(&["a", "b", "c"]), 10), 2.0 / 3.0);
        assert_eq!(recall_at_k(&top, &gt(&["a", "c"]), 10), 1.0);
        let reranked = padded(&["a"], 20);
        assert_eq!(recall_at_k(&reranked, &gt(&["a"]), 50), 1.0);
    }

    #[test]
    fn fc_cases() {
        let top = padded(&["a"], 10);
        assert_eq!(fc_at_10(&top, &gt(&["a"])), 1);
        assert_eq!(fc_at_10(&top, &gt(&["a", "b"])), 0);
        assert_eq!(
            f64::from(fc_at_10(&top, &gt(&["a"]))),
            recall_at_k(&top, &gt(&["a"]), 10)
        );
    }

    #[test]
    fn tier_average_is_mean_of_tiers() {
        let rel = RelevanceSet::new((0..25).map(|i| QueryRelevance::new(alloc::format!("q{i}"), ["g"]))).unwrap();
        // easy: 19/25 = .760 hits, hard: 18/25 = .720 hits
        let mk = |tier: &str, hits: usize| {
            (0..25)
                .map(|i| {
                    let top = if i < hits { "g" } else { "x" };
                    QueryRun::new(alloc::format!("q{i}"), r(&[top])).with_tier(tier)
                })
                .collect::<Vec<_>>()
        };
        let mut runs = mk("easy", 19);
        runs.extend(mk("hard", 18));
        let rep = evaluate_run(&runs, &rel, &[]).unwrap();
        assert!((rep.tiers["easy"].hit_at_1 - 0.76).abs() < 1e-12);
        assert!((rep.tiers["hard"].hit_at_1 - 0.72).abs() < 1e-12);
        assert!((rep.tier_average.hit_at_1 - 0.74).abs() < 1e-12);
        assert!(rep.missing.is_empty());
    }

    #[test]
    fn single_query_perfect() {
        let rel = RelevanceSet::new([QueryRelevance::new("q", ["g"])]).unwrap();
        let rep = evaluate_run(&[QueryRun::new("q", r(&["g"]))], &rel, &[]).unwrap();
        let o = &rep.overall;
        assert_eq!(
            (o.hit_at_1, o.mrr_at_10, o.recall_at_10, o.fc_at_10),
            (1.0, 1.0, 1.0, 1.0)
        );
        assert!(o.depth_limited(10));
    }

    #[test]
    fn unknown_missing_and_empty() {
        let rel = RelevanceSet::new([QueryRelevance::new("a", ["g"]), QueryRelevance::new("b", ["g"])]).unwrap();
        assert_eq!(
            evaluate_run(&[QueryRun::new("zz", r(&["g"]))], &rel, &[]).unwrap_err(),
            EvalError::UnknownQuery("zz".into())
        );
        let rep = evaluate_run(&[QueryRun::new("a", Ranking::default())], &rel, &[]).unwrap();
        assert_eq!(rep.missing, vec![(DEFAULT_TIER.to_string(), "b".to_string())]);
        assert_eq!(rep.empty_rankings.len(), 1);
        assert_eq!(rep.overall.hit_at_1, 0.0);
        assert!(RelevanceSet::new([QueryRelevance::new("e", Vec::<String>::new())]).is_err());
    }

    #[test]
    fn decomposition_fixture() {
        let rel = RelevanceSet::new((0..4).map(|i| QueryRelevance::new(alloc::format!("q{i}"), ["g"]))).unwrap();
        let run = |hits: [u8; 4]| {
            hits.iter()
                .enumerate()
                .map(|(i, &h)| QueryRun::new(alloc::format!("q{i}"), r(&[if h == 1 { "g" } else { "x" }])))
                .collect::<Vec<_>>()
        };
        let d = decompose(&run([1, 0, 1, 0]), &run([1, 1, 0, 0]), &rel).unwrap();
        assert_eq!(
            d.all,
            DecompositionCounts {
                both_correct: 1,
                fixed: 1,
                degraded: 1,
                both_missed: 1
            }
        );
        let same = decompose(&run([1, 0, 1, 0]), &run([1, 0, 1, 0]), &rel).unwrap();
        assert_eq!((same.all.fixed, same.all.degraded), (0, 0));
        assert!(matches!(
            decompose(&run([1, 0, 1, 0])[..3], &run([1, 0, 1, 0]), &rel),
            Err(EvalError::MismatchedQueries(_))
        ));
    }

    #[test]
    fn totals_reconstruct() {
        let c = DecompositionCounts::from_totals(150, 98, 111, 19, 6).unwrap();
        assert_eq!((c.both_correct, c.both_missed), (92, 33));
        assert_eq!((c.encoder_hits(), c.pipeline_hits(), c.total()), (98, 111, 150));
        assert!(DecompositionCounts::from_totals(150, 98, 100, 19, 6).is_none());
    }

    fn words(n: usize) -> String {
        vec!["w"; n].join(" ")
    }

    #[test]
    fn quartiles_of_one_to_eight() {
        let skills = (1..=8)
            .map(|n| Skill::new(alloc::format!("s{n}"), "n", words(n), "", "c"))
            .collect();
        let pool = SkillPool::new(skills, Tier::Easy).unwrap();
        let rel =
            RelevanceSet::new((1..=8).map(|n| QueryRelevance::new(alloc::format!("q{n}"), [alloc::format!("s{n}")])))
                .unwrap();
        let st = quartile_stratify(&rel, &pool).unwrap();
        assert_eq!(st.cuts, [2, 4, 6]);
        assert!(!st.degenerate);
        let mut counts = BTreeMap::new();
        for q in st.per_skill.values() {
            *counts.entry(*q).or_insert(0) += 1;
        }
        assert_eq!(counts.values().copied().collect::<Vec<_>>(), [2, 2, 2, 2]);
    }

    #[test]
    fn quartiles_degenerate_and_missing() {
        let skills = (0..4)
            .map(|n| Skill::new(alloc::format!("s{n}"), "n", words(5), "", "c"))
            .collect();
        let pool = SkillPool::new(skills, Tier::Easy).unwrap();
        let rel =
            RelevanceSet::new((0..4).map(|n| QueryRelevance::new(alloc::format!("q{n}"), [alloc::format!("s{n}")])))
                .unwrap();
        let st = quartile_stratify(&rel, &pool).unwrap();
        assert!(st.degenerate);
        assert!(st.per_query.values().all(|q| *q == Quartile::Q1));

        let bad = RelevanceSet::new([QueryRelevance::new("q", ["nope"])]).unwrap();
        assert_eq!(
            quartile_stratify(&bad, &pool),
            Err(EvalError::GtMissingFromPool("nope".into()))
        );
    }

    #[test]
    fn reference_cut_points_label() {
        let cuts = [19, 27, 35];
        assert_eq!(Quartile::of(19, cuts), Quartile::Q1);
        assert_eq!(Quartile::of(20, cuts), Quartile::Q2);
        assert_eq!(Quartile::of(35, cuts), Quartile::Q3);
        assert_eq!(Quartile::of(36, cuts), Quartile::Q4);
    }
}
