//! Second-stage reranking and the two-stage routing pipeline.
//!
//! A scored reranker reorders the retriever's candidates by descending score
//! with a stable sort, so ties keep retriever order. A listwise judge picks a
//! single candidate, which moves to rank 1 while the rest keep their order.
//! Neither stage can surface a skill the retriever did not return.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{flatten_skill, truncate_chars, truncate_query, FieldCaps, InputFormat, Skill, SkillPool};
use crate::ranking::{Ranking, Retriever, ScoredHit};
use crate::sparse::tokenize;
use crate::ProviderError;

/// Instruction line of the cross-encoder prompt.
pub const RERANK_INSTRUCTION: &str =
    "Given a task description, judge whether the skill document is relevant and useful for completing the task";

/// System prompt for listwise LLM judges.
pub const JUDGE_SYSTEM_PROMPT: &str = "You are an expert at matching tasks to reusable skill definitions. \
Given a task query and a numbered list of candidate skills, identify the SINGLE most relevant skill that best solves the task.\n\n\
Respond with ONLY the number (e.g. '3') of the best matching skill, nothing else.";

/// Cross-encoder input for one (query, skill) pair:
///
/// ```text
/// <Instruct>: ...
/// <Query>: <query_text>
/// <Document>: <name> | <description> | <body>
/// ```
pub fn build_rerank_prompt(query: &str, skill: &Skill, format: InputFormat, caps: &FieldCaps) -> String {
    format!(
        "<Instruct>: {RERANK_INSTRUCTION}\n<Query>: {}\n<Document>: {}",
        truncate_query(query, caps),
        flatten_skill(skill, format, caps)
    )
}

/// Scores (query, candidate) pairs; higher is more relevant. Scores must be
/// deterministic for a given pair within a run.
pub trait RerankProvider {
    /// One score per candidate, in order.
    fn score(&self, query: &str, candidates: &[&Skill]) -> Result<Vec<f64>, ProviderError>;

    fn identity(&self) -> String {
        String::from("rerank-provider")
    }
}

/// Chat messages sent to a listwise judge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgePrompt {
    pub system: String,
    pub user: String,
    pub candidates: usize,
}

/// Builds the judge messages: the query followed by numbered candidates.
pub fn build_judge_prompt(query: &str, candidates: &[&Skill], caps: &FieldCaps) -> JudgePrompt {
    let mut user = String::from(truncate_query(query, caps));
    user.push_str("\n\n");
    for (i, s) in candidates.iter().enumerate() {
        if i > 0 {
            user.push_str("\n\n");
        }
        user.push_str(&format!(
            "[{}] Name: {}\nDescription: {}\nBody: {}",
            i + 1,
            s.name,
            truncate_chars(&s.description, caps.description_chars),
            truncate_chars(&s.body, caps.body_chars)
        ));
    }
    JudgePrompt {
        system: JUDGE_SYSTEM_PROMPT.to_string(),
        user,
        candidates: candidates.len(),
    }
}

/// A listwise judge that answers with free text naming one candidate.
pub trait JudgeProvider {
    fn judge(&self, prompt: &JudgePrompt) -> Result<String, ProviderError>;

    fn identity(&self) -> String {
        String::from("judge-provider")
    }
}

/// Why a judge reply was not applied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum JudgeFlag {
    Unparseable(String),
    OutOfRange(String),
    ProviderFailed(String),
}

/// First run of ASCII digits in the reply, as a 1-based choice.
pub fn parse_judge_reply(reply: &str, candidates: usize) -> Result<usize, JudgeFlag> {
    let bytes = reply.as_bytes();
    let Some(start) = bytes.iter().position(u8::is_ascii_digit) else {
        return Err(JudgeFlag::Unparseable(reply.to_string()));
    };
    let end = bytes[start..]
        .iter()
        .position(|b| !b.is_ascii_digit())
        .map_or(bytes.len(), |e| start + e);
    let negative = start > 0 && bytes[start - 1] == b'-';
    match reply[start..end].parse::<usize>() {
        Ok(n) if !negative && (1..=candidates).contains(&n) => Ok(n),
        _ => Err(JudgeFlag::OutOfRange(reply.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFailure {
    pub skill_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RerankError {
    #[error("no candidates to rerank")]
    NoCandidates,
    #[error("candidate `{0}` is not in the pool")]
    UnknownSkill(String),
    #[error("reranking failed for {} candidate(s) of query {query:?}", failures.len())]
    Provider {
        query: String,
        failures: Vec<CandidateFailure>,
    },
    #[error("retriever failed: {0}")]
    Retriever(ProviderError),
    #[error("k must be at least 1")]
    InvalidK,
}

fn resolve<'p>(candidates: &Ranking, pool: &'p SkillPool) -> Result<Vec<&'p Skill>, RerankError> {
    if candidates.is_empty() {
        return Err(RerankError::NoCandidates);
    }
    candidates
        .ids()
        .map(|id| pool.get(id).ok_or_else(|| RerankError::UnknownSkill(id.to_string())))
        .collect()
}

/// Reorders candidates by descending provider score; equal scores keep the
/// incoming order.
pub fn rerank_scored<P: RerankProvider + ?Sized>(
    query: &str,
    candidates: &Ranking,
    pool: &SkillPool,
    provider: &P,
) -> Result<Ranking, RerankError> {
    let skills = resolve(candidates, pool)?;
    let scores = provider.score(query, &skills).map_err(|e| RerankError::Provider {
        query: query.to_string(),
        failures: candidates
            .ids()
            .map(|id| CandidateFailure {
                skill_id: id.to_string(),
                reason: e.to_string(),
            })
            .collect(),
    })?;
    if scores.len() != skills.len() {
        return Err(RerankError::Provider {
            query: query.to_string(),
            failures: candidates
                .ids()
                .skip(scores.len())
                .map(|id| CandidateFailure {
                    skill_id: id.to_string(),
                    reason: format!(
                        "provider returned {} scores for {} candidates",
                        scores.len(),
                        skills.len()
                    ),
                })
                .collect(),
        });
    }
    let bad: Vec<CandidateFailure> = candidates
        .ids()
        .zip(&scores)
        .filter(|(_, s)| !s.is_finite())
        .map(|(id, s)| CandidateFailure {
            skill_id: id.to_string(),
            reason: format!("non-finite score {s}"),
        })
        .collect();
    if !bad.is_empty() {
        return Err(RerankError::Provider {
            query: query.to_string(),
            failures: bad,
        });
    }
    let mut hits: Vec<ScoredHit> = candidates
        .ids()
        .zip(scores)
        .map(|(id, s)| ScoredHit::new(id, s))
        .collect();
    // stable: ties keep retriever order
    hits.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
    Ok(Ranking::new(hits))
}

/// Result of a judge pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeOutcome {
    /// Candidates with the choice moved to rank 1; hits keep their incoming scores.
    pub ranking: Ranking,
    /// 1-based choice, when one was applied.
    pub choice: Option<usize>,
    pub flag: Option<JudgeFlag>,
}

/// Moves the judged candidate to rank 1. Any failure leaves the order unchanged
/// and flags the query.
pub fn rerank_judge<J: JudgeProvider + ?Sized>(
    query: &str,
    candidates: &Ranking,
    pool: &SkillPool,
    judge: &J,
    caps: &FieldCaps,
) -> Result<JudgeOutcome, RerankError> {
    let skills = resolve(candidates, pool)?;
    let prompt = build_judge_prompt(query, &skills, caps);
    let parsed = judge
        .judge(&prompt)
        .map_err(|e| JudgeFlag::ProviderFailed(e.to_string()))
        .and_then(|reply| parse_judge_reply(&reply, skills.len()));
    Ok(match parsed {
        Ok(choice) => JudgeOutcome {
            ranking: promote(candidates, choice - 1),
            choice: Some(choice),
            flag: None,
        },
        Err(flag) => JudgeOutcome {
            ranking: candidates.clone(),
            choice: None,
            flag: Some(flag),
        },
    })
}

/// Moves the element at `index` to the front, preserving the others' order.
pub fn promote(ranking: &Ranking, index: usize) -> Ranking {
    let mut hits = ranking.hits.clone();
    let chosen = hits.remove(index);
    hits.insert(0, chosen);
    Ranking::new(hits)
}

/// Optional second stage of a routing pipeline.
#[derive(Clone, Copy)]
pub enum RerankStage<'a> {
    None,
    Scored(&'a (dyn RerankProvider + Sync)),
    Judge {
        judge: &'a (dyn JudgeProvider + Sync),
        caps: FieldCaps,
    },
}

impl RerankStage<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            RerankStage::None => "none",
            RerankStage::Scored(_) => "scored",
            RerankStage::Judge { .. } => "judge",
        }
    }
}

/// Output of [`route`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteOutcome {
    pub ranking: Ranking,
    /// The retriever's top-k, before reranking.
    pub retrieved: Ranking,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_flag: Option<JudgeFlag>,
}

/// Applies a rerank stage to an already retrieved candidate list.
pub fn apply_stage(
    query: &str,
    retrieved: &Ranking,
    pool: &SkillPool,
    stage: &RerankStage<'_>,
) -> Result<(Ranking, Option<JudgeFlag>), RerankError> {
    if retrieved.is_empty() {
        return Ok((Ranking::default(), None));
    }
    match stage {
        RerankStage::None => Ok((retrieved.clone(), None)),
        RerankStage::Scored(p) => Ok((rerank_scored(query, retrieved, pool, *p)?, None)),
        RerankStage::Judge { judge, caps } => {
            let out = rerank_judge(query, retrieved, pool, *judge, caps)?;
            Ok((out.ranking, out.flag))
        }
    }
}

/// Retrieves the top `k` candidates and optionally reranks them.
pub fn route<R: Retriever + ?Sized>(
    query: &str,
    retriever: &R,
    stage: &RerankStage<'_>,
    pool: &SkillPool,
    k: usize,
) -> Result<RouteOutcome, RerankError> {
    if k == 0 {
        return Err(RerankError::InvalidK);
    }
    let mut retrieved = retriever.retrieve(query, k).map_err(RerankError::Retriever)?;
    retrieved.hits.truncate(k);
    let (ranking, judge_flag) = apply_stage(query, &retrieved, pool, stage)?;
    Ok(RouteOutcome {
        ranking,
        retrieved,
        judge_flag,
    })
}

/// Model-free scorer: fraction of distinct query tokens present in the
/// flattened candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LexicalOverlapScorer {
    pub caps: FieldCaps,
    pub format: InputFormat,
}

impl Default for LexicalOverlapScorer {
    fn default() -> Self {
        Self {
            caps: FieldCaps::RERANKER,
            format: InputFormat::Full,
        }
    }
}

impl RerankProvider for LexicalOverlapScorer {
    fn score(&self, query: &str, candidates: &[&Skill]) -> Result<Vec<f64>, ProviderError> {
        let q: BTreeSet<String> = tokenize(truncate_query(query, &self.caps)).into_iter().collect();
        Ok(candidates
            .iter()
            .map(|s| {
                if q.is_empty() {
                    return 0.0;
                }
                let doc: BTreeSet<String> = tokenize(&flatten_skill(s, self.format, &self.caps))
                    .into_iter()
                    .collect();
                q.intersection(&doc).count() as f64 / q.len() as f64
            })
            .collect())
    }

    fn identity(&self) -> String {
        String::from("stub:lexical-overlap")
    }
}

/// Scores 1 for ground-truth skills of the query and 0 otherwise; an upper
/// bound on what any reranker can do with a candidate list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OracleScorer {
    by_query: BTreeMap<String, BTreeSet<String>>,
}

impl OracleScorer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: impl Into<String>, gt: impl IntoIterator<Item = impl Into<String>>) {
        self.by_query
            .insert(query.into(), gt.into_iter().map(Into::into).collect());
    }
}

impl RerankProvider for OracleScorer {
    fn score(&self, query: &str, candidates: &[&Skill]) -> Result<Vec<f64>, ProviderError> {
        let gt = self
            .by_query
            .get(query)
            .ok_or_else(|| ProviderError::new("oracle", "query has no ground truth"))?;
        Ok(candidates
            .iter()
            .map(|s| if gt.contains(&s.id) { 1.0 } else { 0.0 })
            .collect())
    }

    fn identity(&self) -> String {
        String::from("oracle")
    }
}
