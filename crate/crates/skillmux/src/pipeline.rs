//! Owned retrieval and rerank stacks assembled from configuration and files.

use std::collections::BTreeMap;

use skillmux_core::dense::{
    DenseRetriever, EmbedOptions, EmbeddingProvider, HashingEmbedder, NormPolicy, QueryInstruction, TextKind,
    VectorIndex,
};
use skillmux_core::ranking::Retriever;
use skillmux_core::rerank::{JudgeProvider, LexicalOverlapScorer, OracleScorer, RerankProvider, RerankStage};
use skillmux_core::sparse::Bm25Index;
use skillmux_core::{FieldCaps, ProviderError, Ranking, Skill};

use crate::config::Config;
use crate::http::{ChatClient, EmbeddingClient, RerankClient};

/// Query/document embedder chosen at the command line.
pub enum Embedder {
    Hashing(HashingEmbedder),
    Http(EmbeddingClient),
}

impl EmbeddingProvider for Embedder {
    fn dimension(&self) -> usize {
        match self {
            Embedder::Hashing(h) => h.dimension(),
            Embedder::Http(c) => c.dimension(),
        }
    }

    fn embed(&self, texts: &[String], kind: TextKind) -> Result<Vec<Vec<f32>>, ProviderError> {
        match self {
            Embedder::Hashing(h) => h.embed(texts, kind),
            Embedder::Http(c) => c.embed(texts, kind),
        }
    }

    fn identity(&self) -> String {
        match self {
            Embedder::Hashing(h) => h.identity(),
            Embedder::Http(c) => c.identity(),
        }
    }
}

pub fn embed_options(config: &Config) -> EmbedOptions {
    EmbedOptions {
        batch_size: config.providers.embedding.batch_size,
        max_retries: config.providers.embedding.max_retries,
        norm_policy: norm_policy(config),
    }
}

pub fn norm_policy(config: &Config) -> NormPolicy {
    NormPolicy {
        tolerance: config.retrieval.norm_tolerance,
    }
}

pub fn query_instruction(config: &Config) -> QueryInstruction {
    QueryInstruction {
        instruction_text: config.retrieval.query_instruction.clone(),
    }
}

/// A first-stage retriever that owns its index.
pub enum Engine {
    Bm25(Bm25Index),
    Dense {
        index: VectorIndex,
        embedder: Embedder,
        instruction: QueryInstruction,
        caps: FieldCaps,
    },
    /// Query vectors computed offline, looked up by query text.
    Precomputed {
        index: VectorIndex,
        queries: BTreeMap<String, Vec<f32>>,
    },
}

impl Engine {
    pub fn name(&self) -> &'static str {
        match self {
            Engine::Bm25(_) => "bm25",
            Engine::Dense { .. } => "dense",
            Engine::Precomputed { .. } => "dense-precomputed",
        }
    }

    pub fn identity(&self) -> String {
        match self {
            Engine::Bm25(ix) => format!(
                "bm25 k1={} b={} format={}",
                ix.params().k1,
                ix.params().b,
                ix.format().as_str()
            ),
            Engine::Dense { embedder, .. } => embedder.identity(),
            Engine::Precomputed { index, .. } => format!("precomputed dim={}", index.dim()),
        }
    }
}

impl Retriever for Engine {
    fn retrieve(&self, query: &str, k: usize) -> Result<Ranking, ProviderError> {
        match self {
            Engine::Bm25(ix) => ix.retrieve(query, k),
            Engine::Dense {
                index,
                embedder,
                instruction,
                caps,
            } => {
                let mut r = DenseRetriever::new(index, embedder, *caps);
                r.instruction = instruction.clone();
                r.retrieve(query, k)
            }
            Engine::Precomputed { index, queries } => {
                let v = queries
                    .get(query)
                    .ok_or_else(|| ProviderError::new("precomputed", "no stored vector for this query"))?;
                index
                    .search(v, k)
                    .map_err(|e| ProviderError::new("precomputed", e.to_string()))
            }
        }
    }
}

/// Pointwise scorers available to the scored rerank stage.
pub enum Scorer {
    Http(RerankClient),
    Lexical(LexicalOverlapScorer),
    Oracle(OracleScorer),
}

impl RerankProvider for Scorer {
    fn score(&self, query: &str, candidates: &[&Skill]) -> Result<Vec<f64>, ProviderError> {
        match self {
            Scorer::Http(c) => c.score(query, candidates),
            Scorer::Lexical(s) => s.score(query, candidates),
            Scorer::Oracle(s) => s.score(query, candidates),
        }
    }

    fn identity(&self) -> String {
        match self {
            Scorer::Http(c) => c.identity(),
            Scorer::Lexical(s) => s.identity(),
            Scorer::Oracle(s) => s.identity(),
        }
    }
}

/// Owned second stage.
pub enum Reranker {
    None,
    Scored(Scorer),
    Judge { chat: ChatClient, caps: FieldCaps },
}

impl Reranker {
    pub fn stage(&self) -> RerankStage<'_> {
        match self {
            Reranker::None => RerankStage::None,
            Reranker::Scored(s) => RerankStage::Scored(s),
            Reranker::Judge { chat, caps } => RerankStage::Judge {
                judge: chat,
                caps: *caps,
            },
        }
    }

    pub fn identity(&self) -> Option<String> {
        match self {
            Reranker::None => None,
            Reranker::Scored(s) => Some(s.identity()),
            Reranker::Judge { chat, .. } => Some(chat.identity()),
        }
    }
}
