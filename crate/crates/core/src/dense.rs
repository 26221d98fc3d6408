//! Dense retrieval: embedding providers, the unit-vector index, exact cosine
//! search and an optional inverted-file approximate mode.
//!
//! Exact search is the reference path. Approximate mode clusters rows with
//! spherical k-means and probes the closest lists; the probe count is
//! calibrated at build time against exact search so that measured recall
//! meets the configured target.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{flatten_skill, truncate_query, FieldCaps, InputFormat, SkillPool};
use crate::math;
use crate::ranking::{top_k_positions, Ranking, Retriever, ScoredHit};
use crate::sparse::tokenize;
use crate::ProviderError;

/// Which side of the retrieval pair a text belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextKind {
    Query,
    Document,
}

/// A text embedding model. Implementations must return vectors of
/// [`EmbeddingProvider::dimension`] entries, L2-normalised, and must be
/// deterministic for identical input.
pub trait EmbeddingProvider {
    fn dimension(&self) -> usize;

    /// Embeds a batch; the output has one vector per input text, in order.
    fn embed(&self, texts: &[String], kind: TextKind) -> Result<Vec<Vec<f32>>, ProviderError>;

    /// Identifier recorded in run manifests.
    fn identity(&self) -> String {
        String::from("embedding-provider")
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn embed(&self, texts: &[String], kind: TextKind) -> Result<Vec<Vec<f32>>, ProviderError> {
        (**self).embed(texts, kind)
    }
    fn identity(&self) -> String {
        (**self).identity()
    }
}

/// Instruction prepended to queries (never to skills).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryInstruction {
    pub instruction_text: String,
}

impl Default for QueryInstruction {
    fn default() -> Self {
        Self {
            instruction_text: String::from(
                "Given a task description, retrieve the most relevant skill document that would help an agent complete the task",
            ),
        }
    }
}

impl QueryInstruction {
    /// `Instruct: <instruction>\nQuery: <query>`; the query is cut to the
    /// query cap first.
    pub fn apply(&self, query: &str, caps: &FieldCaps) -> String {
        format!(
            "Instruct: {}\nQuery: {}",
            self.instruction_text,
            truncate_query(query, caps)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DenseError {
    #[error("cannot embed an empty pool")]
    EmptyPool,
    #[error("provider failed after {attempts} attempt(s): {source}")]
    Provider { attempts: usize, source: ProviderError },
    #[error("`{id}`: expected dimension {expected}, got {got}")]
    DimensionMismatch { id: String, expected: usize, got: usize },
    #[error("`{id}`: vector norm {norm} is outside tolerance of unit length")]
    NonUnitVector { id: String, norm: f64 },
    #[error("`{id}`: zero or non-finite vector")]
    DegenerateVector { id: String },
    #[error("provider returned {got} vectors for {expected} texts")]
    BatchSize { expected: usize, got: usize },
    #[error("index is not in approximate mode")]
    NotApproximate,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("{ids} ids for {rows} vectors")]
    LengthMismatch { ids: usize, rows: usize },
}

/// How far a provider vector may stray from unit norm before rejection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormPolicy {
    /// Deviations up to this are renormalised with a warning.
    pub tolerance: f64,
}

impl Default for NormPolicy {
    fn default() -> Self {
        Self { tolerance: 1e-3 }
    }
}

const UNIT_EPS: f64 = 1e-6;

impl NormPolicy {
    /// Renormalises `v` in place if it is close to unit length.
    pub fn enforce(&self, id: &str, v: &mut [f32]) -> Result<(), DenseError> {
        let norm = math::l2_norm(v);
        if !norm.is_finite() || norm == 0.0 {
            return Err(DenseError::DegenerateVector { id: id.to_string() });
        }
        let dev = (norm - 1.0).abs();
        if dev <= UNIT_EPS {
            return Ok(());
        }
        if dev <= self.tolerance {
            log::warn!("renormalising `{id}` (norm {norm})");
            scale(v, norm);
            return Ok(());
        }
        Err(DenseError::NonUnitVector {
            id: id.to_string(),
            norm,
        })
    }
}

fn scale(v: &mut [f32], norm: f64) {
    for x in v.iter_mut() {
        *x = (f64::from(*x) / norm) as f32;
    }
}

/// Returns a unit-norm copy of `v`, or `None` for zero/non-finite input.
pub fn normalized(v: &[f32]) -> Option<Vec<f32>> {
    let norm = math::l2_norm(v);
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    let mut out = v.to_vec();
    scale(&mut out, norm);
    Some(out)
}

/// Search mode of a [`VectorIndex`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum IndexMode {
    Exact,
    Approximate { recall_target: f64 },
}

/// `n` unit vectors of dimension `d`, row-aligned with a pool.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    ivf: Option<Ivf>,
}

impl VectorIndex {
    /// Builds an exact index; every row is normalised to unit length.
    pub fn from_vectors(ids: Vec<String>, vectors: Vec<Vec<f32>>) -> Result<Self, DenseError> {
        if ids.len() != vectors.len() {
            return Err(DenseError::LengthMismatch {
                ids: ids.len(),
                rows: vectors.len(),
            });
        }
        let dim = vectors.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(dim * vectors.len());
        for (id, v) in ids.iter().zip(&vectors) {
            if v.len() != dim {
                return Err(DenseError::DimensionMismatch {
                    id: id.clone(),
                    expected: dim,
                    got: v.len(),
                });
            }
            let unit = normalized(v).ok_or_else(|| DenseError::DegenerateVector { id: id.clone() })?;
            data.extend_from_slice(&unit);
        }
        Ok(Self {
            dim,
            ids,
            data,
            ivf: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Id → row lookup table, for callers doing many lookups.
    pub fn row_map(&self) -> alloc::collections::BTreeMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    pub fn mode(&self) -> IndexMode {
        match &self.ivf {
            Some(ivf) => IndexMode::Approximate {
                recall_target: ivf.recall_target,
            },
            None => IndexMode::Exact,
        }
    }

    /// Probe count and measured calibration recall of the approximate mode.
    pub fn ann_stats(&self) -> Option<AnnStats> {
        self.ivf.as_ref().map(|ivf| AnnStats {
            lists: ivf.lists.len(),
            nprobe: ivf.nprobe,
            calibration_recall: ivf.calibration_recall,
        })
    }

    fn check_query(&self, query: &[f32]) -> Result<(), DenseError> {
        if query.len() != self.dim {
            return Err(DenseError::DimensionMismatch {
                id: String::from("<query>"),
                expected: self.dim,
                got: query.len(),
            });
        }
        Ok(())
    }

    /// Full-scan cosine top-k for a unit query vector; ties go to the lower row.
    pub fn search_exact(&self, query: &[f32], k: usize) -> Result<Ranking, DenseError> {
        if k == 0 {
            return Err(DenseError::InvalidK);
        }
        self.check_query(query)?;
        let scored = (0..self.len()).map(|r| (math::dot(query, self.row(r)), r)).collect();
        Ok(self.to_ranking(top_k_positions(scored, k)))
    }

    /// Searches using the index's own mode.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Ranking, DenseError> {
        match self.ivf {
            Some(_) => self.ann_search(query, k),
            None => self.search_exact(query, k),
        }
    }

    fn to_ranking(&self, top: Vec<(f64, usize)>) -> Ranking {
        top.into_iter()
            .map(|(s, r)| ScoredHit::new(self.ids[r].clone(), s))
            .collect()
    }

    /// Cosine similarity between two stored rows.
    pub fn cosine_rows(&self, a: usize, b: usize) -> f64 {
        math::dot(self.row(a), self.row(b))
    }

    /// Switches the index to approximate mode.
    pub fn with_ann(mut self, config: &AnnConfig) -> Self {
        self.ivf = Some(Ivf::build(&self, config));
        self
    }

    pub fn ann_search(&self, query: &[f32], k: usize) -> Result<Ranking, DenseError> {
        let ivf = self.ivf.as_ref().ok_or(DenseError::NotApproximate)?;
        if k == 0 {
            return Err(DenseError::InvalidK);
        }
        self.check_query(query)?;
        Ok(self.to_ranking(ivf.search(self, query, k, ivf.nprobe)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnStats {
    pub lists: usize,
    pub nprobe: usize,
    pub calibration_recall: f64,
}

/// Approximate-mode build settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnConfig {
    pub recall_target: f64,
    /// Number of inverted lists; `None` uses round(sqrt(n)).
    pub lists: Option<usize>,
    pub kmeans_iterations: usize,
    pub calibration_queries: usize,
    pub calibration_k: usize,
    /// Added to the target during calibration so held-out recall keeps up.
    pub calibration_margin: f64,
    pub seed: u64,
}

impl Default for AnnConfig {
    fn default() -> Self {
        Self {
            recall_target: 0.95,
            lists: None,
            kmeans_iterations: 10,
            calibration_queries: 200,
            calibration_k: 20,
            calibration_margin: 0.01,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Ivf {
    centroids: Vec<f32>,
    lists: Vec<Vec<u32>>,
    nprobe: usize,
    recall_target: f64,
    calibration_recall: f64,
}

impl Ivf {
    fn build(index: &VectorIndex, config: &AnnConfig) -> Ivf {
        let n = index.len();
        let dim = index.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let nlist = config
            .lists
            .unwrap_or_else(|| libm::round(math::sqrt(n as f64)) as usize)
            .clamp(1, n.max(1));

        let mut centroids: Vec<f32> = Vec::with_capacity(nlist * dim);
        if n > 0 {
            for r in sample(&mut rng, n, nlist).into_iter() {
                centroids.extend_from_slice(index.row(r));
            }
        }
        let mut assign = vec![0usize; n];
        for _ in 0..config.kmeans_iterations.max(1) {
            for (r, slot) in assign.iter_mut().enumerate() {
                *slot = nearest_centroid(&centroids, dim, index.row(r));
            }
            let mut sums = vec![0f64; nlist * dim];
            let mut counts = vec![0usize; nlist];
            for (r, &c) in assign.iter().enumerate() {
                counts[c] += 1;
                for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(index.row(r)) {
                    *s += f64::from(x);
                }
            }
            for c in 0..nlist {
                if counts[c] == 0 {
                    continue;
                }
                let mean: Vec<f32> = sums[c * dim..(c + 1) * dim].iter().map(|&x| x as f32).collect();
                if let Some(unit) = normalized(&mean) {
                    centroids[c * dim..(c + 1) * dim].copy_from_slice(&unit);
                }
            }
        }
        let mut lists = vec![Vec::new(); nlist];
        for (r, &c) in assign.iter().enumerate() {
            lists[c].push(r as u32);
        }

        let mut ivf = Ivf {
            centroids,
            lists,
            nprobe: nlist,
            recall_target: config.recall_target,
            calibration_recall: 1.0,
        };
        if config.recall_target < 1.0 && n > 0 {
            ivf.calibrate(index, config, &mut rng);
        }
        ivf
    }

    fn calibrate(&mut self, index: &VectorIndex, config: &AnnConfig, rng: &mut ChaCha8Rng) {
        let k = config.calibration_k.clamp(1, index.len());
        let queries: Vec<Vec<f32>> = (0..config.calibration_queries.max(1))
            .map(|i| {
                if i % 2 == 0 {
                    random_unit(rng, index.dim)
                } else {
                    let row = index.row(rng.gen_range(0..index.len()));
                    let noise = random_unit(rng, index.dim);
                    let mixed: Vec<f32> = row.iter().zip(&noise).map(|(a, b)| a + 0.5 * b).collect();
                    normalized(&mixed).unwrap_or_else(|| row.to_vec())
                }
            })
            .collect();
        let truth: Vec<Vec<usize>> = queries
            .iter()
            .map(|q| {
                let scored = (0..index.len()).map(|r| (math::dot(q, index.row(r)), r)).collect();
                top_k_positions(scored, k).into_iter().map(|(_, r)| r).collect()
            })
            .collect();
        let goal = (config.recall_target + config.calibration_margin).min(1.0);
        for nprobe in 1..=self.lists.len() {
            let recall = queries
                .iter()
                .zip(&truth)
                .map(|(q, t)| {
                    let got = self.search(index, q, k, nprobe);
                    let hit = got.iter().filter(|(_, r)| t.contains(r)).count();
                    hit as f64 / t.len() as f64
                })
                .sum::<f64>()
                / queries.len() as f64;
            if recall >= goal || nprobe == self.lists.len() {
                self.nprobe = nprobe;
                self.calibration_recall = recall;
                return;
            }
        }
    }

    fn search(&self, index: &VectorIndex, query: &[f32], k: usize, nprobe: usize) -> Vec<(f64, usize)> {
        let dim = index.dim;
        let nlist = self.lists.len();
        let mut order: Vec<(f64, usize)> = (0..nlist)
            .map(|c| (math::dot(query, &self.centroids[c * dim..(c + 1) * dim]), c))
            .collect();
        order.sort_unstable_by(|a, b| crate::ranking::by_score_then_position(*a, *b));
        let scored = order
            .iter()
            .take(nprobe)
            .flat_map(|&(_, c)| self.lists[c].iter())
            .map(|&r| (math::dot(query, index.row(r as usize)), r as usize))
            .collect();
        top_k_positions(scored, k)
    }
}

fn nearest_centroid(centroids: &[f32], dim: usize, v: &[f32]) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for (c, cent) in centroids.chunks_exact(dim).enumerate() {
        let s = math::dot(v, cent);
        if s > best.0 {
            best = (s, c);
        }
    }
    best.1
}

/// Uniform random direction (Box–Muller Gaussian, normalised).
pub fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim)
            .map(|_| {
                let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
                let u2: f64 = rng.gen();
                (math::sqrt(-2.0 * math::ln(u1)) * libm::cos(core::f64::consts::TAU * u2)) as f32
            })
            .collect();
        if let Some(u) = normalized(&v) {
            return u;
        }
    }
}

/// Pool embedding settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedOptions {
    pub batch_size: usize,
    /// Additional attempts after a failed batch.
    pub max_retries: usize,
    pub norm_policy: NormPolicy,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_retries: 2,
            norm_policy: NormPolicy::default(),
        }
    }
}

/// Embeds one batch with retries.
pub fn embed_batch_with_retry<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    texts: &[String],
    kind: TextKind,
    max_retries: usize,
) -> Result<Vec<Vec<f32>>, DenseError> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match provider.embed(texts, kind) {
            Ok(v) if v.len() == texts.len() => return Ok(v),
            Ok(v) => {
                return Err(DenseError::BatchSize {
                    expected: texts.len(),
                    got: v.len(),
                })
            }
            Err(e) if attempts <= max_retries => {
                log::warn!("embedding attempt {attempts} failed: {e}");
            }
            Err(e) => return Err(DenseError::Provider { attempts, source: e }),
        }
    }
}

/// Flattened skill texts in pool order.
pub fn pool_texts(pool: &SkillPool, caps: &FieldCaps, format: InputFormat) -> Vec<String> {
    pool.iter().map(|s| flatten_skill(s, format, caps)).collect()
}

/// Assembles provider output (in pool order) into an exact index, enforcing
/// the dimension and norm contracts.
pub fn assemble_index(
    pool: &SkillPool,
    vectors: Vec<Vec<f32>>,
    dim: usize,
    policy: &NormPolicy,
) -> Result<VectorIndex, DenseError> {
    if vectors.len() != pool.len() {
        return Err(DenseError::BatchSize {
            expected: pool.len(),
            got: vectors.len(),
        });
    }
    let mut data = Vec::with_capacity(dim * pool.len());
    for (skill, mut v) in pool.iter().zip(vectors) {
        if v.len() != dim {
            return Err(DenseError::DimensionMismatch {
                id: skill.id.clone(),
                expected: dim,
                got: v.len(),
            });
        }
        policy.enforce(&skill.id, &mut v)?;
        data.extend_from_slice(&v);
    }
    Ok(VectorIndex {
        dim,
        ids: pool.iter().map(|s| s.id.clone()).collect(),
        data,
        ivf: None,
    })
}

/// Embeds every skill (flattened per `format`) into an exact index.
pub fn embed_pool<P: EmbeddingProvider + ?Sized>(
    pool: &SkillPool,
    provider: &P,
    caps: &FieldCaps,
    format: InputFormat,
    options: &EmbedOptions,
) -> Result<VectorIndex, DenseError> {
    if pool.is_empty() {
        return Err(DenseError::EmptyPool);
    }
    let texts = pool_texts(pool, caps, format);
    let mut vectors = Vec::with_capacity(texts.len());
    for batch in texts.chunks(options.batch_size.max(1)) {
        vectors.extend(embed_batch_with_retry(
            provider,
            batch,
            TextKind::Document,
            options.max_retries,
        )?);
    }
    assemble_index(pool, vectors, provider.dimension(), &options.norm_policy)
}

/// Embeds an instruction-prefixed query.
pub fn embed_query<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    instruction: &QueryInstruction,
    caps: &FieldCaps,
    query: &str,
    policy: &NormPolicy,
) -> Result<Vec<f32>, DenseError> {
    let text = instruction.apply(query, caps);
    let mut out = embed_batch_with_retry(provider, &[text], TextKind::Query, 0)?;
    let mut v = out.pop().expect("batch size checked");
    policy.enforce("<query>", &mut v)?;
    Ok(v)
}

/// Embeds the query and searches the index in its own mode.
pub fn dense_search<P: EmbeddingProvider + ?Sized>(
    index: &VectorIndex,
    query: &str,
    provider: &P,
    instruction: &QueryInstruction,
    caps: &FieldCaps,
    k: usize,
) -> Result<Ranking, DenseError> {
    if k == 0 {
        return Err(DenseError::InvalidK);
    }
    let v = embed_query(provider, instruction, caps, query, &NormPolicy::default())?;
    index.search(&v, k)
}

/// A [`Retriever`] over a vector index and the provider that built it.
pub struct DenseRetriever<'a, P: ?Sized> {
    pub index: &'a VectorIndex,
    pub provider: &'a P,
    pub instruction: QueryInstruction,
    pub caps: FieldCaps,
}

impl<'a, P: EmbeddingProvider + ?Sized> DenseRetriever<'a, P> {
    pub fn new(index: &'a VectorIndex, provider: &'a P, caps: FieldCaps) -> Self {
        Self {
            index,
            provider,
            instruction: QueryInstruction::default(),
            caps,
        }
    }
}

impl<P: EmbeddingProvider + ?Sized> Retriever for DenseRetriever<'_, P> {
    fn retrieve(&self, query: &str, k: usize) -> Result<Ranking, ProviderError> {
        dense_search(self.index, query, self.provider, &self.instruction, &self.caps, k).map_err(|e| match e {
            DenseError::Provider { source, .. } => source,
            other => ProviderError::new("dense", other.to_string()),
        })
    }
}

/// Model-free embedder: signed feature hashing of lowercased tokens, unit
/// normalised. Identical bags of words embed identically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn embed_text(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        for token in tokenize(text) {
            let h = fnv1a(token.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        normalized(&v).unwrap_or_else(|| {
            let mut e = vec![0f32; self.dim];
            e[0] = 1.0;
            e
        })
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl EmbeddingProvider for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String], _kind: TextKind) -> Result<Vec<Vec<f32>>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }

    fn identity(&self) -> String {
        format!("stub:hashing-{}", self.dim)
    }
}
