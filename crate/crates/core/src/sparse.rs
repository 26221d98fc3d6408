//! Tokenization and Okapi BM25 retrieval.
//!
//! Scoring per query token `t` (repeated query tokens contribute repeatedly):
//!
//! ```text
//! idf(t)   = ln(1 + (N - df + 0.5) / (df + 0.5))
//! s(t, d)  = idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |d| / avgdl))
//! ```
//!
//! No stemming and no stopword list; tokens are lowercased alphanumeric runs.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{flatten_skill, FieldCaps, InputFormat, SkillPool};
use crate::math;
use crate::ranking::{top_k_positions, Ranking, Retriever, ScoredHit};
use crate::ProviderError;

/// Lowercased alphanumeric runs, in order.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.chars().flat_map(char::to_lowercase).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), Bm25Error> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Bm25Error::InvalidParams("k1 must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Bm25Error::InvalidParams("b must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Bm25Error {
    #[error("cannot index an empty pool")]
    EmptyPool,
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(&'static str),
    #[error("ids and documents differ in length ({ids} vs {docs})")]
    LengthMismatch { ids: usize, docs: usize },
}

/// One posting: document row and the term's frequency in it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Immutable inverted index with Okapi BM25 scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    params: Bm25Params,
    format: InputFormat,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

/// Indexes a pool's flattened skill text.
pub fn build_bm25(
    pool: &SkillPool,
    caps: &FieldCaps,
    format: InputFormat,
    params: Bm25Params,
) -> Result<Bm25Index, Bm25Error> {
    if pool.is_empty() {
        return Err(Bm25Error::EmptyPool);
    }
    let ids = pool.iter().map(|s| s.id.clone()).collect();
    let docs: Vec<String> = pool.iter().map(|s| flatten_skill(s, format, caps)).collect();
    let mut index = Bm25Index::from_documents(ids, &docs, params)?;
    index.format = format;
    Ok(index)
}

impl Bm25Index {
    pub fn from_documents<S: AsRef<str>>(ids: Vec<String>, docs: &[S], params: Bm25Params) -> Result<Self, Bm25Error> {
        params.validate()?;
        if docs.is_empty() {
            return Err(Bm25Error::EmptyPool);
        }
        if ids.len() != docs.len() {
            return Err(Bm25Error::LengthMismatch {
                ids: ids.len(),
                docs: docs.len(),
            });
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        for (row, doc) in docs.iter().enumerate() {
            let tokens = tokenize(doc.as_ref());
            doc_lengths.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: row as u32,
                    tf: count,
                });
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        Ok(Self {
            params,
            format: InputFormat::Full,
            avg_doc_length: total as f64 / doc_lengths.len() as f64,
            doc_ids: ids,
            doc_lengths,
            postings,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn format(&self) -> InputFormat {
        self.format
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.document_frequency(term) as f64;
        math::ln(1.0 + (n - df + 0.5) / (df + 0.5))
    }

    fn term_weight(&self, idf: f64, tf: u32, doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = f64::from(tf);
        let dl = f64::from(self.doc_lengths[doc]);
        let norm = if self.avg_doc_length > 0.0 {
            1.0 - b + b * dl / self.avg_doc_length
        } else {
            1.0
        };
        idf * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// Score of every document, indexed by row.
    pub fn score_all(&self, query: &str) -> Vec<f64> {
        let mut scores = alloc::vec![0.0; self.doc_count()];
        for term in tokenize(query) {
            if let Some(list) = self.postings.get(&term) {
                let idf = self.idf(&term);
                for p in list {
                    scores[p.doc as usize] += self.term_weight(idf, p.tf, p.doc as usize);
                }
            }
        }
        scores
    }

    /// Top-`k` positive-scoring documents; ties go to the earlier row.
    pub fn search(&self, query: &str, k: usize) -> Ranking {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for term in tokenize(query) {
            if let Some(list) = self.postings.get(&term) {
                let idf = self.idf(&term);
                for p in list {
                    let row = p.doc as usize;
                    *acc.entry(row).or_default() += self.term_weight(idf, p.tf, row);
                }
            }
        }
        let scored = acc
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(row, s)| (s, row))
            .collect();
        top_k_positions(scored, k)
            .into_iter()
            .map(|(s, row)| ScoredHit::new(self.doc_ids[row].clone(), s))
            .collect()
    }

    /// Ranks only the given rows (e.g. a dense candidate set) by BM25 score.
    /// Zero-scoring rows are kept, after all positive ones.
    pub fn rank_rows(&self, query: &str, rows: &[usize]) -> Vec<(usize, f64)> {
        let all = self.score_all(query);
        let mut out: Vec<(f64, usize)> = rows.iter().map(|&r| (all[r], r)).collect();
        out.sort_by(|a, b| crate::ranking::by_score_then_position(*a, *b));
        out.into_iter().map(|(s, r)| (r, s)).collect()
    }
}

impl Retriever for Bm25Index {
    fn retrieve(&self, query: &str, k: usize) -> Result<Ranking, ProviderError> {
        Ok(self.search(query, k))
    }
}
