//! Skill pools: loading, deduplication, tier assembly, input flattening and
//! metadata audits.
//!
//! A skill is flattened into model input as `name | description | body`
//! (`full`) or `name | description` (`nd`). Description and body are cut to
//! per-model character caps before joining; caps count Unicode scalar values.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;

/// Category assigned to skills whose record carries none.
pub const UNCATEGORIZED: &str = "uncategorized";

/// Field separator used by both flattened formats.
pub const FIELD_SEPARATOR: &str = " | ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skill {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub body: String,
    #[serde(default = "default_category")]
    pub category: String,
}

fn default_category() -> String {
    UNCATEGORIZED.to_string()
}

impl Skill {
    pub fn new(
        id: impl Into<String>,
        name: impl Into<String>,
        description: impl Into<String>,
        body: impl Into<String>,
        category: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            description: description.into(),
            body: body.into(),
            category: category.into(),
        }
    }
}

/// Raw record as found in a pool file; every field may be missing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillRecord {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub body: Option<String>,
    #[serde(default)]
    pub category: Option<String>,
}

impl SkillRecord {
    /// Validates the required fields. `index` is the record's position in its stream.
    pub fn into_skill(self, index: usize) -> Result<Skill, CorpusError> {
        let id = required(self.id, index, "id")?;
        let name = required(self.name, index, "name")?;
        let category = self
            .category
            .filter(|c| !c.trim().is_empty())
            .unwrap_or_else(default_category);
        Ok(Skill {
            id,
            name,
            description: self.description.unwrap_or_default(),
            body: self.body.unwrap_or_default(),
            category,
        })
    }
}

impl From<Skill> for SkillRecord {
    fn from(s: Skill) -> Self {
        Self {
            id: Some(s.id),
            name: Some(s.name),
            description: Some(s.description),
            body: Some(s.body),
            category: Some(s.category),
        }
    }
}

fn required(value: Option<String>, index: usize, field: &'static str) -> Result<String, CorpusError> {
    match value {
        Some(v) if !v.trim().is_empty() => Ok(v),
        _ => Err(CorpusError::MissingField { index, field }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("record {index}: missing or empty `{field}`")]
    MissingField { index: usize, field: &'static str },
    #[error("duplicate skill id `{id}` at records {first} and {second}")]
    DuplicateId { id: String, first: usize, second: usize },
    #[error("distractor id `{id}` collides with a base pool skill")]
    IdCollision { id: String },
    #[error("pool is empty")]
    EmptyPool,
    #[error("field cap `{0}` must be greater than zero")]
    ZeroCap(&'static str),
    #[error("unknown tier `{0}`")]
    UnknownTier(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Easy,
    Hard,
    Custom,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Easy => "easy",
            Tier::Hard => "hard",
            Tier::Custom => "custom",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Tier {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Tier::Easy),
            "hard" => Ok(Tier::Hard),
            "custom" => Ok(Tier::Custom),
            other => Err(CorpusError::UnknownTier(other.to_string())),
        }
    }
}

/// An immutable, insertion-ordered set of skills with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillPool {
    skills: Vec<Skill>,
    tier: Tier,
    by_id: BTreeMap<String, usize>,
}

impl SkillPool {
    /// Builds a pool from validated skills, rejecting duplicate ids.
    pub fn new(skills: Vec<Skill>, tier: Tier) -> Result<Self, CorpusError> {
        let mut by_id = BTreeMap::new();
        for (i, skill) in skills.iter().enumerate() {
            if let Some(&first) = by_id.get(&skill.id) {
                return Err(CorpusError::DuplicateId {
                    id: skill.id.clone(),
                    first,
                    second: i,
                });
            }
            by_id.insert(skill.id.clone(), i);
        }
        Ok(Self { skills, tier, by_id })
    }

    /// Loads raw records in stream order. The first invalid record aborts
    /// the load; its stream index is carried in the error.
    pub fn load<I>(records: I, tier: Tier) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = SkillRecord>,
    {
        let skills = records
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.into_skill(i))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(skills, tier)
    }

    pub fn tier(&self) -> Tier {
        self.tier
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    pub fn skills(&self) -> &[Skill] {
        &self.skills
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Skill> {
        self.skills.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Skill> {
        self.by_id.get(id).map(|&i| &self.skills[i])
    }

    /// Insertion position of a skill id.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn with_tier(mut self, tier: Tier) -> Self {
        self.tier = tier;
        self
    }

    pub fn into_skills(self) -> Vec<Skill> {
        self.skills
    }

    /// Returns a pool without the given ids, order otherwise preserved.
    pub fn without(&self, remove: &alloc::collections::BTreeSet<String>) -> SkillPool {
        let skills = self
            .skills
            .iter()
            .filter(|s| !remove.contains(&s.id))
            .cloned()
            .collect();
        SkillPool::new(skills, self.tier).expect("subset of a valid pool has unique ids")
    }
}

impl<'a> IntoIterator for &'a SkillPool {
    type Item = &'a Skill;
    type IntoIter = core::slice::Iter<'a, Skill>;

    fn into_iter(self) -> Self::IntoIter {
        self.skills.iter()
    }
}

/// Keeps the first occurrence of each id. Skills sharing a name under
/// different ids are all kept.
pub fn dedup_by_id(skills: Vec<Skill>) -> (Vec<Skill>, usize) {
    let mut seen = alloc::collections::BTreeSet::new();
    let before = skills.len();
    let kept: Vec<Skill> = skills.into_iter().filter(|s| seen.insert(s.id.clone())).collect();
    let removed = before - kept.len();
    (kept, removed)
}

/// Hard-tier pool: base skills followed by distractors.
pub fn assemble_tier(base: &SkillPool, distractors: &SkillPool) -> Result<SkillPool, CorpusError> {
    if let Some(clash) = distractors.iter().find(|d| base.contains(&d.id)) {
        return Err(CorpusError::IdCollision { id: clash.id.clone() });
    }
    let mut skills = Vec::with_capacity(base.len() + distractors.len());
    skills.extend(base.iter().cloned());
    skills.extend(distractors.iter().cloned());
    SkillPool::new(skills, Tier::Hard)
}

/// Which skill fields a model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    /// Name and description only.
    Nd,
    /// Name, description and body.
    #[default]
    Full,
}

impl InputFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            InputFormat::Nd => "nd",
            InputFormat::Full => "full",
        }
    }
}

impl core::str::FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nd" => Ok(InputFormat::Nd),
            "full" => Ok(InputFormat::Full),
            other => Err(alloc::format!("unknown input format `{other}` (expected nd|full)")),
        }
    }
}

/// Character caps applied before any model sees the text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldCaps {
    pub query_chars: usize,
    pub description_chars: usize,
    pub body_chars: usize,
}

impl FieldCaps {
    /// Bi-encoder caps: query 1500, description 300, body 2500.
    pub const ENCODER: FieldCaps = FieldCaps {
        query_chars: 1500,
        description_chars: 300,
        body_chars: 2500,
    };

    /// Reranker and LLM-judge caps: description 500, body 2000.
    pub const RERANKER: FieldCaps = FieldCaps {
        query_chars: 1500,
        description_chars: 500,
        body_chars: 2000,
    };

    pub fn new(query_chars: usize, description_chars: usize, body_chars: usize) -> Result<Self, CorpusError> {
        let caps = Self {
            query_chars,
            description_chars,
            body_chars,
        };
        caps.validate()?;
        Ok(caps)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.query_chars == 0 {
            return Err(CorpusError::ZeroCap("query_chars"));
        }
        if self.description_chars == 0 {
            return Err(CorpusError::ZeroCap("description_chars"));
        }
        if self.body_chars == 0 {
            return Err(CorpusError::ZeroCap("body_chars"));
        }
        Ok(())
    }
}

impl Default for FieldCaps {
    fn default() -> Self {
        Self::ENCODER
    }
}

/// Prefix of `text` holding at most `max_chars` Unicode scalar values.
pub fn truncate_chars(text: &str, max_chars: usize) -> &str {
    match text.char_indices().nth(max_chars) {
        Some((byte, _)) => &text[..byte],
        None => text,
    }
}

pub fn truncate_query<'a>(text: &'a str, caps: &FieldCaps) -> &'a str {
    truncate_chars(text, caps.query_chars)
}

/// Flattens a skill into a single model input string.
pub fn flatten_skill(skill: &Skill, format: InputFormat, caps: &FieldCaps) -> String {
    let description = truncate_chars(&skill.description, caps.description_chars);
    let mut out = String::with_capacity(skill.name.len() + description.len() + 8);
    out.push_str(&skill.name);
    out.push_str(FIELD_SEPARATOR);
    out.push_str(description);
    if format == InputFormat::Full {
        out.push_str(FIELD_SEPARATOR);
        out.push_str(truncate_chars(&skill.body, caps.body_chars));
    }
    out
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Field-length statistics for a pool, in whitespace-separated words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataAudit {
    pub skills: usize,
    pub fraction_empty_descriptions: f64,
    pub fraction_desc_under_10_words: f64,
    pub fraction_desc_under_25_words: f64,
    pub median_desc_words: usize,
    pub median_body_words: usize,
    pub p90_body_words: usize,
}

/// Lower median of an unsorted sample.
pub(crate) fn lower_median(values: &mut [usize]) -> usize {
    values.sort_unstable();
    values[(values.len() - 1) / 2]
}

/// Nearest-rank percentile (`p` in (0, 100]) of a sorted sample.
pub(crate) fn nearest_rank_sorted<T: Copy>(sorted: &[T], p: f64) -> T {
    let n = sorted.len();
    let rank = math::ceil(p / 100.0 * n as f64) as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn audit_pool(pool: &SkillPool) -> Result<MetadataAudit, CorpusError> {
    if pool.is_empty() {
        return Err(CorpusError::EmptyPool);
    }
    let n = pool.len();
    let mut desc: Vec<usize> = pool.iter().map(|s| word_count(&s.description)).collect();
    let mut body: Vec<usize> = pool.iter().map(|s| word_count(&s.body)).collect();
    let empty = pool.iter().filter(|s| s.description.trim().is_empty()).count();
    let under = |limit: usize| desc.iter().filter(|&&w| w < limit).count() as f64 / n as f64;
    let fraction_desc_under_10_words = under(10);
    let fraction_desc_under_25_words = under(25);
    let median_desc_words = lower_median(&mut desc);
    let median_body_words = lower_median(&mut body);
    let p90_body_words = nearest_rank_sorted(&body, 90.0);
    Ok(MetadataAudit {
        skills: n,
        fraction_empty_descriptions: empty as f64 / n as f64,
        fraction_desc_under_10_words,
        fraction_desc_under_25_words,
        median_desc_words,
        median_body_words,
        p90_body_words,
    })
}
