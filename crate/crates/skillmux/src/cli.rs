//! The `skillmux` command-line surface.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use skillmux_core::corpus::{assemble_tier, audit_pool, dedup_by_id};
use skillmux_core::dense::{embed_pool, embed_query, random_unit, EmbeddingProvider, HashingEmbedder, VectorIndex};
use skillmux_core::eval::{
    decompose, evaluate_run, quartile_stratify, topk_ablation, EvalQuery, MetricsReport, QueryRun, RelevanceSet,
};
use skillmux_core::forge::{
    build_listwise_groups, example_seed, exclude_denied, filter_false_negatives, generate_with_qc, qc_check,
    remove_functional_duplicates, EquivalenceJudge, FalseNegativeFilter, NegativeMiner, QueryRecord, QueryStyle,
};
use skillmux_core::objectives::{
    checks, finite_diff_check, info_nce, listwise_ce, pointwise_bce, ListwiseScores, SimilarityMatrix, Temperature,
};
use skillmux_core::rerank::{route, JudgeProvider, LexicalOverlapScorer, OracleScorer};
use skillmux_core::sparse::build_bm25;
use skillmux_core::{InputFormat, ProviderError, Skill, SkillPool, Tier};

use crate::bench::{throughput, time_queries};
use crate::config::Config;
use crate::http::{
    embed_pool_concurrent, ChatClient, ChatEquivalenceJudge, EmbeddingClient, HttpSettings, RerankClient,
};
use crate::io::{
    ingest_skill_dir, read_bm25, read_id_list, read_jsonl, read_pool, read_run, read_skills, write_bm25, write_json,
    write_jsonl, write_run, write_skills, EmbeddingFile, QueryFile,
};
use crate::manifest::RunManifest;
use crate::pipeline::{embed_options, norm_policy, query_instruction, Embedder, Engine, Reranker, Scorer};
use crate::prompts::{self, skill_values, style_template};
use crate::report;

#[derive(Parser, Debug)]
#[command(
    name = "skillmux",
    version,
    about = "Route task queries to skills in large skill pools"
)]
pub struct Cli {
    /// TOML configuration file; built-in defaults apply when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load, deduplicate, audit and assemble skill pools.
    #[command(subcommand)]
    Pool(PoolCmd),
    /// Build sparse, dense and approximate indexes.
    #[command(subcommand)]
    Index(IndexCmd),
    /// Retrieve (and optionally rerank) skills for one query or a query file.
    Route(RouteArgs),
    /// Build training data: negatives, filtering, listwise groups, query QC.
    #[command(subcommand)]
    Forge(ForgeCmd),
    /// Loss function checks.
    #[command(subcommand)]
    Objectives(ObjectivesCmd),
    /// Score run files and produce report tables.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Serving latency and throughput.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Args, Debug, Clone)]
pub struct PoolArgs {
    /// Skill pool (JSONL records with id, name, description, body, category).
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long, default_value = "custom", value_parser = parse_tier)]
    pub tier: Tier,
}

fn parse_tier(s: &str) -> Result<Tier, String> {
    s.parse().map_err(|e: skillmux_core::corpus::CorpusError| e.to_string())
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatArg {
    Nd,
    Full,
}

impl From<FormatArg> for InputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Nd => InputFormat::Nd,
            FormatArg::Full => InputFormat::Full,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedderKind {
    /// Model-free feature hashing.
    Hashing,
    /// The configured HTTP embedding service.
    Http,
}

#[derive(Args, Debug, Clone)]
pub struct EmbedderArgs {
    #[arg(long, value_enum, default_value_t = EmbedderKind::Hashing)]
    pub embedder: EmbedderKind,
    /// Dimension of the hashing embedder when no embedding file fixes it.
    #[arg(long, default_value_t = 256)]
    pub hash_dim: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrieverKind {
    Bm25,
    Dense,
}

#[derive(Args, Debug, Clone)]
pub struct RetrieverArgs {
    #[arg(long, value_enum, default_value_t = RetrieverKind::Bm25)]
    pub retriever: RetrieverKind,
    /// Prebuilt BM25 index; built from the pool when absent.
    #[arg(long)]
    pub bm25_index: Option<PathBuf>,
    /// Pool embeddings; the pool is embedded on the fly when absent.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Query embeddings keyed by query id (requires a query file).
    #[arg(long)]
    pub query_embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    /// Search the dense index approximately.
    #[arg(long)]
    pub ann: bool,
    /// Skill fields the retriever sees; defaults to the configured format.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum RerankKind {
    None,
    Scored,
    Judge,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerKind {
    /// The configured HTTP reranker.
    Http,
    /// Query-token overlap.
    Lexical,
    /// Scores ground-truth skills 1 (needs a query file with ground truth).
    Oracle,
}

#[derive(Args, Debug, Clone)]
pub struct RerankArgs {
    #[arg(long, value_enum, default_value_t = RerankKind::None)]
    pub reranker: RerankKind,
    #[arg(long, value_enum, default_value_t = ScorerKind::Http)]
    pub scorer: ScorerKind,
}

#[derive(Subcommand, Debug)]
pub enum PoolCmd {
    /// Validate skill records or a SKILL.md tree and write a pool file.
    Load {
        #[arg(long, required_unless_present = "skill_dir", conflicts_with = "skill_dir")]
        input: Option<PathBuf>,
        #[arg(long)]
        skill_dir: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Drop repeated ids, keeping the first occurrence.
    Dedup {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Field-length statistics.
    Audit {
        #[command(flatten)]
        pool: PoolArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Union of a base pool and a distractor pool.
    AssembleTier {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        distractors: PathBuf,
        #[arg(long, default_value = "hard", value_parser = parse_tier)]
        tier: Tier,
        #[arg(long)]
        output: PathBuf,
    },
    /// Remove pool skills functionally equivalent to a ground-truth skill.
    DedupFunctional {
        #[command(flatten)]
        pool: PoolArgs,
        /// Ground-truth ids: one per line, or a query file.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value_t = EquivalenceKind::Chat)]
        judge: EquivalenceKind,
        #[arg(long)]
        neighbours: Option<usize>,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquivalenceKind {
    /// The configured chat model with the equivalence template.
    Chat,
    /// Identical trimmed bodies.
    SameBody,
}

#[derive(Subcommand, Debug)]
pub enum IndexCmd {
    /// Build and persist a BM25 index.
    Bm25 {
        #[command(flatten)]
        pool: PoolArgs,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Embed the pool and write an embedding file.
    Dense {
        #[command(flatten)]
        pool: PoolArgs,
        #[command(flatten)]
        embedder: EmbedderArgs,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Calibrate the approximate index and measure its recall.
    Ann {
        #[command(flatten)]
        pool: PoolArgs,
        #[arg(long)]
        embeddings: PathBuf,
        /// Random probe queries for the recall measurement.
        #[arg(long, default_value_t = 200)]
        probes: usize,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct RouteArgs {
    #[command(flatten)]
    pub pool: PoolArgs,
    #[command(flatten)]
    pub retriever: RetrieverArgs,
    #[command(flatten)]
    pub rerank: RerankArgs,
    #[arg(long, conflicts_with = "queries")]
    pub query: Option<String>,
    /// Query file (JSONL with query_id and text).
    #[arg(long, required_unless_present = "query")]
    pub queries: Option<PathBuf>,
    /// Candidate depth; defaults to the configured k.
    #[arg(long)]
    pub k: Option<usize>,
    /// Run file to write; a single query prints to stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum ForgeCmd {
    /// Mine typed hard negatives for every (query, ground-truth) pair.
    Mine {
        #[command(flatten)]
        pool: PoolArgs,
        /// Query file with text and ground truth.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[command(flatten)]
        embedder: EmbedderArgs,
        #[arg(long)]
        bm25_index: Option<PathBuf>,
        /// Skill ids never used as negatives (e.g. evaluation ground truth).
        #[arg(long)]
        deny: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Drop likely false negatives from training examples.
    Filter {
        #[command(flatten)]
        pool: PoolArgs,
        #[arg(long)]
        examples: PathBuf,
        /// Query file mapping query text to its full ground-truth set.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[command(flatten)]
        embedder: EmbedderArgs,
        /// Also drop examples whose positive is listed, and listed negatives.
        #[arg(long)]
        deny: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build listwise reranker groups from retriever candidates.
    Groups {
        #[command(flatten)]
        pool: PoolArgs,
        #[command(flatten)]
        retriever: RetrieverArgs,
        #[arg(long)]
        queries: PathBuf,
        /// Keep retriever negatives unfiltered.
        #[arg(long)]
        no_filter: bool,
        #[arg(long)]
        output: PathBuf,
    },
    /// Check generated queries for name leaks, CLI leaks and length.
    Qc {
        #[command(flatten)]
        pool: PoolArgs,
        /// JSONL with query_id, skill_id, text and optional style.
        #[arg(long)]
        queries: PathBuf,
        /// Style for records without one.
        #[arg(long)]
        style: Option<QueryStyle>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Render prompt templates, or generate queries through the chat model.
    Prompts {
        /// List the built-in templates.
        #[arg(long)]
        list: bool,
        #[arg(long, required_unless_present_any = ["list", "generate"])]
        template: Option<String>,
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Skill ids to render or generate for (all skills when absent).
        #[arg(long)]
        skill: Vec<String>,
        /// Extra placeholder values as KEY=VALUE.
        #[arg(long)]
        var: Vec<String>,
        /// Generate one QC-checked query per skill.
        #[arg(long, requires_all = ["style", "pool", "output"])]
        generate: bool,
        #[arg(long)]
        style: Option<QueryStyle>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum ObjectivesCmd {
    /// Compare analytic gradients with central differences on random instances.
    CheckGradients {
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum EvalCmd {
    /// Score run files: `--run SYSTEM[:TIER]=PATH`, repeatable.
    Run {
        #[arg(long = "run", required = true)]
        runs: Vec<String>,
        /// Query file with ground truth (and optional tier, difficulty, strata).
        #[arg(long)]
        relevance: PathBuf,
        /// Pool for description-length quartile strata.
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Per-query Hit@1 transitions between an encoder and a pipeline run.
    Decompose {
        /// `[TIER=]PATH`, repeatable.
        #[arg(long, required = true)]
        encoder: Vec<String>,
        /// `[TIER=]PATH`, repeatable.
        #[arg(long, required = true)]
        pipeline: Vec<String>,
        #[arg(long)]
        relevance: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Pipeline Hit@1 as a function of candidate depth.
    Ablate {
        #[command(flatten)]
        pool: PoolArgs,
        #[command(flatten)]
        retriever: RetrieverArgs,
        #[command(flatten)]
        rerank: RerankArgs,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [10, 20, 50])]
        ks: Vec<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Hit@1 by ground-truth description-length quartile.
    Stratify {
        #[arg(long = "run", required = true)]
        runs: Vec<String>,
        #[arg(long)]
        relevance: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub pool: PoolArgs,
    #[command(flatten)]
    pub retriever: RetrieverArgs,
    #[command(flatten)]
    pub rerank: RerankArgs,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Row label in the report table.
    #[arg(long, default_value = "pipeline")]
    pub label: String,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum BenchCmd {
    /// Sequential per-query latency.
    Latency(BenchArgs),
    /// Concurrent throughput.
    Throughput {
        #[command(flatten)]
        args: BenchArgs,
        #[arg(long)]
        concurrency: Option<usize>,
    },
}

struct Ctx {
    config: Config,
    argv: Vec<String>,
}

impl Ctx {
    fn manifest(&self) -> RunManifest {
        RunManifest::new(&self.config, self.argv.clone())
    }

    fn format(&self, arg: Option<FormatArg>) -> InputFormat {
        arg.map(Into::into)
            .unwrap_or_else(|| self.config.retrieval.input_format().expect("validated"))
    }
}

/// Records `outputs` and writes the manifest beside the first.
fn finish(mut m: RunManifest, outputs: &[&Path]) -> Result<()> {
    for o in outputs {
        m.output(o)?;
    }
    if let Some(first) = outputs.first() {
        let path = m.write_beside(first)?;
        log::info!("wrote {} (manifest {})", first.display(), path.display());
    }
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let ctx = Ctx { config, argv };
    match cli.command {
        Command::Pool(c) => pool_cmd(&ctx, c),
        Command::Index(c) => index_cmd(&ctx, c),
        Command::Route(a) => route_cmd(&ctx, a),
        Command::Forge(c) => forge_cmd(&ctx, c),
        Command::Objectives(c) => objectives_cmd(c),
        Command::Eval(c) => eval_cmd(&ctx, c),
        Command::Bench(c) => bench_cmd(&ctx, c),
        Command::Config => {
            print!("{}", ctx.config.to_toml());
            Ok(())
        }
    }
}

fn load_pool(args: &PoolArgs, m: &mut RunManifest) -> Result<SkillPool> {
    m.input(&args.pool)?;
    Ok(read_pool(&args.pool, args.tier)?)
}

fn pool_cmd(ctx: &Ctx, cmd: PoolCmd) -> Result<()> {
    let mut m = ctx.manifest();
    match cmd {
        PoolCmd::Load {
            input,
            skill_dir,
            output,
        } => {
            let pool = match (input, skill_dir) {
                (Some(p), _) => {
                    m.input(&p)?;
                    read_pool(&p, Tier::Custom)?
                }
                (None, Some(d)) => {
                    m.input(&d)?;
                    SkillPool::new(ingest_skill_dir(&d)?, Tier::Custom)?
                }
                (None, None) => bail!("pass --input or --skill-dir"),
            };
            write_skills(&output, pool.iter())?;
            m.note("skills", pool.len());
            eprintln!("{} skills", pool.len());
            finish(m, &[&output])
        }
        PoolCmd::Dedup { input, output } => {
            m.input(&input)?;
            let (skills, dropped) = dedup_by_id(read_skills(&input)?);
            write_skills(&output, &skills)?;
            m.note("dropped", dropped);
            eprintln!("kept {} skills, dropped {dropped} repeated ids", skills.len());
            finish(m, &[&output])
        }
        PoolCmd::Audit { pool, output } => {
            let pool = load_pool(&pool, &mut m)?;
            let audit = audit_pool(&pool)?;
            print_json(&audit)?;
            if let Some(out) = output {
                write_json(&out, &audit)?;
                finish(m, &[&out])?;
            }
            Ok(())
        }
        PoolCmd::AssembleTier {
            base,
            distractors,
            tier,
            output,
        } => {
            m.input(&base)?;
            m.input(&distractors)?;
            let base = read_pool(&base, Tier::Custom)?;
            let extra = read_pool(&distractors, Tier::Custom)?;
            let pool = assemble_tier(&base, &extra)?.with_tier(tier);
            write_skills(&output, pool.iter())?;
            m.note("skills", pool.len());
            eprintln!("{} skills ({tier})", pool.len());
            finish(m, &[&output])
        }
        PoolCmd::DedupFunctional {
            pool,
            gt,
            judge,
            neighbours,
            output,
        } => {
            let pool = load_pool(&pool, &mut m)?;
            m.input(&gt)?;
            let gt_ids = read_id_list(&gt)?;
            let bm25 = build_bm25(&pool, &ctx.config.encoder_caps(), InputFormat::Full, ctx.config.bm25)?;
            let n = neighbours.unwrap_or(ctx.config.forge.dedup_neighbours);
            let outcome = match judge {
                EquivalenceKind::SameBody => remove_functional_duplicates(&pool, &gt_ids, &bm25, &SameBody, n)?,
                EquivalenceKind::Chat => {
                    let chat = chat_client(ctx)?;
                    m.provider("equivalence", chat.identity(), Some(chat_endpoint(ctx)));
                    let j = ChatEquivalenceJudge {
                        chat: &chat,
                        caps: ctx.config.reranker_caps(),
                    };
                    remove_functional_duplicates(&pool, &gt_ids, &bm25, &j, n)?
                }
            };
            write_skills(&output, outcome.pool.iter())?;
            m.note("removed", &outcome.removed);
            m.note("skipped", &outcome.skipped);
            eprintln!(
                "removed {} skills, {} pairs skipped after provider errors",
                outcome.removed.len(),
                outcome.skipped.len()
            );
            finish(m, &[&output])
        }
    }
}

struct SameBody;

impl EquivalenceJudge for SameBody {
    fn equivalent(&self, a: &Skill, b: &Skill) -> Result<bool, ProviderError> {
        Ok(!a.body.trim().is_empty() && a.body.trim() == b.body.trim())
    }

    fn identity(&self) -> String {
        "same-body".into()
    }
}

fn settings(role: &str, ctx: &Ctx) -> Result<HttpSettings> {
    let p = match role {
        "embedding" => &ctx.config.providers.embedding,
        "reranker" => &ctx.config.providers.reranker,
        _ => &ctx.config.providers.chat,
    };
    Ok(HttpSettings::from_config(&format!("providers.{role}"), p)?)
}

fn chat_client(ctx: &Ctx) -> Result<ChatClient> {
    Ok(ChatClient::new(
        settings("chat", ctx)?,
        ctx.config.providers.chat.temperature,
    )?)
}

fn chat_endpoint(ctx: &Ctx) -> String {
    ctx.config.providers.chat.endpoint.clone().unwrap_or_default()
}

fn embedder(ctx: &Ctx, args: &EmbedderArgs, dim: Option<usize>, m: &mut RunManifest) -> Result<Embedder> {
    let e = match args.embedder {
        EmbedderKind::Hashing => Embedder::Hashing(HashingEmbedder::new(dim.unwrap_or(args.hash_dim))),
        EmbedderKind::Http => {
            let client = EmbeddingClient::new(settings("embedding", ctx)?, ctx.config.providers.embedding.dimension)?;
            if let Some(d) = dim {
                if client.dimension() != d {
                    bail!(
                        "embedding service returns {} dimensions, the embedding file has {d}",
                        client.dimension()
                    );
                }
            }
            Embedder::Http(client)
        }
    };
    m.provider(
        "embedding",
        e.identity(),
        ctx.config.providers.embedding.endpoint.clone(),
    );
    Ok(e)
}

/// Pool vectors from a file, or embedded now with `embedder`.
fn pool_index(
    ctx: &Ctx,
    pool: &SkillPool,
    file: Option<&Path>,
    embedder: &Embedder,
    format: InputFormat,
    m: &mut RunManifest,
) -> Result<VectorIndex> {
    if let Some(path) = file {
        m.input(path)?;
        let f = EmbeddingFile::read(path)?;
        return Ok(f.index_for(pool, &norm_policy(&ctx.config), path)?);
    }
    let caps = ctx.config.encoder_caps();
    let opts = embed_options(&ctx.config);
    Ok(match embedder {
        Embedder::Http(c) => {
            embed_pool_concurrent(pool, c, &caps, format, &opts, ctx.config.providers.embedding.in_flight)?
        }
        Embedder::Hashing(h) => embed_pool(pool, h, &caps, format, &opts)?,
    })
}

fn file_dim(file: Option<&Path>) -> Result<Option<usize>> {
    Ok(match file {
        Some(p) => Some(EmbeddingFile::read(p)?.header.dimension),
        None => None,
    })
}

fn index_cmd(ctx: &Ctx, cmd: IndexCmd) -> Result<()> {
    let mut m = ctx.manifest();
    match cmd {
        IndexCmd::Bm25 { pool, format, output } => {
            let pool = load_pool(&pool, &mut m)?;
            let ix = build_bm25(&pool, &ctx.config.encoder_caps(), ctx.format(format), ctx.config.bm25)?;
            write_bm25(&output, &ix)?;
            m.note("documents", ix.doc_count());
            m.note("vocabulary", ix.vocabulary_size());
            eprintln!("{} documents, {} terms", ix.doc_count(), ix.vocabulary_size());
            finish(m, &[&output])
        }
        IndexCmd::Dense {
            pool,
            embedder: eargs,
            format,
            output,
        } => {
            let pool = load_pool(&pool, &mut m)?;
            let e = embedder(ctx, &eargs, None, &mut m)?;
            let ix = pool_index(ctx, &pool, None, &e, ctx.format(format), &mut m)?;
            let mut file = EmbeddingFile::from_index(&ix, Some(e.identity()));
            file.header.format = Some(ctx.format(format).as_str().to_string());
            file.write(&output)?;
            eprintln!("{} vectors of dimension {}", ix.len(), ix.dim());
            finish(m, &[&output])
        }
        IndexCmd::Ann {
            pool,
            embeddings,
            probes,
            output,
        } => {
            let pool = load_pool(&pool, &mut m)?;
            m.input(&embeddings)?;
            let exact = EmbeddingFile::read(&embeddings)?.index_for(&pool, &norm_policy(&ctx.config), &embeddings)?;
            let ann = exact.clone().with_ann(&ctx.config.ann);
            let stats = ann
                .ann_stats()
                .ok_or_else(|| anyhow!("approximate index was not built"))?;
            let k = ctx.config.retrieval.k.min(exact.len());
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.config.seed);
            let mut recall = 0.0;
            for _ in 0..probes {
                let q = random_unit(&mut rng, exact.dim());
                let truth: BTreeSet<String> = exact.search_exact(&q, k)?.ids().map(str::to_string).collect();
                let got = ann.ann_search(&q, k)?;
                recall += got.ids().filter(|id| truth.contains(*id)).count() as f64 / k.max(1) as f64;
            }
            let probe_recall = if probes == 0 { 1.0 } else { recall / probes as f64 };
            #[derive(Serialize)]
            struct AnnReport {
                stats: skillmux_core::dense::AnnStats,
                k: usize,
                probes: usize,
                probe_recall: f64,
            }
            let r = AnnReport {
                stats,
                k,
                probes,
                probe_recall,
            };
            write_json(&output, &r)?;
            print_json(&r)?;
            finish(m, &[&output])
        }
    }
}

fn engine(
    ctx: &Ctx,
    pool: &SkillPool,
    args: &RetrieverArgs,
    queries: Option<&QueryFile>,
    m: &mut RunManifest,
) -> Result<Engine> {
    let format = ctx.format(args.format);
    let e = match args.retriever {
        RetrieverKind::Bm25 => {
            let ix = match &args.bm25_index {
                Some(p) => {
                    m.input(p)?;
                    let ix = read_bm25(p)?;
                    let ids: Vec<&str> = pool.iter().map(|s| s.id.as_str()).collect();
                    if ix.doc_ids().iter().map(String::as_str).ne(ids.iter().copied()) {
                        bail!("{}: index documents do not match the pool", p.display());
                    }
                    ix
                }
                None => build_bm25(pool, &ctx.config.encoder_caps(), format, ctx.config.bm25)?,
            };
            Engine::Bm25(ix)
        }
        RetrieverKind::Dense => {
            let dim = file_dim(args.embeddings.as_deref())?;
            let mut index = match &args.query_embeddings {
                Some(_) => {
                    let path = args
                        .embeddings
                        .as_deref()
                        .ok_or_else(|| anyhow!("--query-embeddings needs --embeddings"))?;
                    m.input(path)?;
                    EmbeddingFile::read(path)?.index_for(pool, &norm_policy(&ctx.config), path)?
                }
                None => {
                    let emb = embedder(ctx, &args.embedder, dim, m)?;
                    let ix = pool_index(ctx, pool, args.embeddings.as_deref(), &emb, format, m)?;
                    let ix = if args.ann { ix.with_ann(&ctx.config.ann) } else { ix };
                    return Ok(Engine::Dense {
                        index: ix,
                        embedder: emb,
                        instruction: query_instruction(&ctx.config),
                        caps: ctx.config.encoder_caps(),
                    });
                }
            };
            let qpath = args.query_embeddings.as_deref().expect("matched Some");
            let qf = queries.ok_or_else(|| anyhow!("--query-embeddings needs a query file"))?;
            m.input(qpath)?;
            let stored = EmbeddingFile::read(qpath)?;
            if stored.header.dimension != index.dim() {
                bail!(
                    "query embeddings have dimension {}, pool embeddings {}",
                    stored.header.dimension,
                    index.dim()
                );
            }
            let by_id = stored.by_id();
            let mut vectors = BTreeMap::new();
            for r in &qf.records {
                let text = r
                    .text
                    .as_ref()
                    .ok_or_else(|| anyhow!("query `{}` has no text", r.query_id))?;
                let v = by_id
                    .get(r.query_id.as_str())
                    .ok_or_else(|| anyhow!("{}: no vector for query `{}`", qpath.display(), r.query_id))?;
                vectors.insert(text.clone(), v.to_vec());
            }
            if args.ann {
                index = index.with_ann(&ctx.config.ann);
            }
            Engine::Precomputed {
                index,
                queries: vectors,
            }
        }
    };
    m.provider("retriever", e.identity(), None);
    Ok(e)
}

fn reranker(ctx: &Ctx, args: &RerankArgs, queries: Option<&QueryFile>, m: &mut RunManifest) -> Result<Reranker> {
    let r = match args.reranker {
        RerankKind::None => Reranker::None,
        RerankKind::Judge => Reranker::Judge {
            chat: chat_client(ctx)?,
            caps: ctx.config.reranker_caps(),
        },
        RerankKind::Scored => Reranker::Scored(match args.scorer {
            ScorerKind::Http => Scorer::Http(RerankClient::new(
                settings("reranker", ctx)?,
                ctx.config.reranker_caps(),
                ctx.format(None),
            )?),
            ScorerKind::Lexical => Scorer::Lexical(LexicalOverlapScorer {
                caps: ctx.config.reranker_caps(),
                format: ctx.format(None),
            }),
            ScorerKind::Oracle => {
                let qf = queries.ok_or_else(|| anyhow!("the oracle scorer needs a query file with ground truth"))?;
                let mut o = OracleScorer::new();
                for r in &qf.records {
                    if let Some(t) = &r.text {
                        o.insert(t.clone(), r.gt.iter().cloned());
                    }
                }
                Scorer::Oracle(o)
            }
        }),
    };
    if let Some(id) = r.identity() {
        let endpoint = match args.reranker {
            RerankKind::Judge => ctx.config.providers.chat.endpoint.clone(),
            _ if args.scorer == ScorerKind::Http => ctx.config.providers.reranker.endpoint.clone(),
            _ => None,
        };
        m.provider("reranker", id, endpoint);
    }
    Ok(r)
}

fn route_cmd(ctx: &Ctx, a: RouteArgs) -> Result<()> {
    let mut m = ctx.manifest();
    let pool = load_pool(&a.pool, &mut m)?;
    let qf = match &a.queries {
        Some(p) => {
            m.input(p)?;
            Some(QueryFile::read(p)?)
        }
        None => None,
    };
    let engine = engine(ctx, &pool, &a.retriever, qf.as_ref(), &mut m)?;
    let rr = reranker(ctx, &a.rerank, qf.as_ref(), &mut m)?;
    let stage = rr.stage();
    let k = a.k.unwrap_or(ctx.config.retrieval.k);
    let Some(qf) = qf else {
        let text = a.query.expect("clap enforces --query or --queries");
        let out = route(&text, &engine, &stage, &pool, k)?;
        let run = QueryRun::new("query", out.ranking);
        if let Some(flag) = &out.judge_flag {
            log::warn!("judge reply not applied: {flag:?}");
        }
        match a.output {
            Some(path) => {
                write_run(&path, std::slice::from_ref(&run))?;
                finish(m, &[&path])?;
            }
            None => println!("{}", serde_json::to_string(&crate::io::RunRecord::from_run(&run))?),
        }
        return Ok(());
    };
    let output = a.output.ok_or_else(|| anyhow!("--output is required with --queries"))?;
    let mut runs = Vec::with_capacity(qf.records.len());
    let mut flags = BTreeMap::new();
    for q in qf.queries()? {
        let out = route(&q.text, &engine, &stage, &pool, k).with_context(|| format!("query `{}`", q.query_id))?;
        if let Some(flag) = out.judge_flag {
            flags.insert(q.query_id.clone(), flag);
        }
        let mut run = QueryRun::new(q.query_id, out.ranking);
        run.tier = q.tier;
        runs.push(run);
    }
    write_run(&output, &runs)?;
    if !flags.is_empty() {
        eprintln!("{} queries flagged by the judge (order left unchanged)", flags.len());
    }
    m.note("queries", runs.len());
    m.note("k", k);
    m.note("judge_flags", &flags);
    finish(m, &[&output])
}

fn gt_lookup(qf: &QueryFile) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in &qf.records {
        if let Some(t) = &r.text {
            out.entry(t.clone()).or_default().extend(r.gt.iter().cloned());
        }
    }
    out
}

fn forge_cmd(ctx: &Ctx, cmd: ForgeCmd) -> Result<()> {
    let mut m = ctx.manifest();
    match cmd {
        ForgeCmd::Mine {
            pool,
            queries,
            embeddings,
            embedder: eargs,
            bm25_index,
            deny,
            output,
        } => {
            let pool = load_pool(&pool, &mut m)?;
            m.input(&queries)?;
            let qf = QueryFile::read(&queries)?;
            let emb = embedder(ctx, &eargs, file_dim(embeddings.as_deref())?, &mut m)?;
            let format = ctx.format(None);
            let vectors = pool_index(ctx, &pool, embeddings.as_deref(), &emb, format, &mut m)?;
            let bm25 = match &bm25_index {
                Some(p) => {
                    m.input(p)?;
                    read_bm25(p)?
                }
                None => build_bm25(&pool, &ctx.config.encoder_caps(), format, ctx.config.bm25)?,
            };
            let mut miner = NegativeMiner::new(&pool, &vectors, &bm25, ctx.config.forge.mix())?;
            if let Some(d) = &deny {
                m.input(d)?;
                miner = miner.with_denylist(&read_id_list(d)?);
            }
            let instruction = query_instruction(&ctx.config);
            let caps = ctx.config.encoder_caps();
            let mut examples = Vec::new();
            for r in &qf.records {
                let text = r
                    .text
                    .as_ref()
                    .ok_or_else(|| anyhow!("query `{}` has no text", r.query_id))?;
                let qv = embed_query(&emb, &instruction, &caps, text, &norm_policy(&ctx.config))?;
                for positive in &r.gt {
                    let seed = example_seed(ctx.config.seed, &format!("{}\u{1f}{positive}", r.query_id));
                    examples.push(miner.mine(text, positive, &qv, seed)?);
                }
            }
            write_jsonl(&output, &examples)?;
            let flagged = examples.iter().filter(|e| e.flagged).count();
            m.note("examples", examples.len());
            m.note("flagged", flagged);
            eprintln!("{} examples, {flagged} flagged for backfill", examples.len());
            finish(m, &[&output])
        }
        ForgeCmd::Filter {
            pool,
            examples,
            queries,
            embeddings,
            embedder: eargs,
            deny,
            output,
        } => {
            let pool = load_pool(&pool, &mut m)?;
            m.input(&examples)?;
            let mut ex = read_jsonl(&examples)?;
            let emb = embedder(ctx, &eargs, file_dim(embeddings.as_deref())?, &mut m)?;
            let vectors = pool_index(ctx, &pool, embeddings.as_deref(), &emb, ctx.format(None), &mut m)?;
            let lookup = match &queries {
                Some(q) => {
                    m.input(q)?;
                    gt_lookup(&QueryFile::read(q)?)
                }
                None => BTreeMap::new(),
            };
            if let Some(d) = &deny {
                m.input(d)?;
                let (kept, dropped) = exclude_denied(ex, &read_id_list(d)?);
                m.note("denied_examples", dropped);
                ex = kept;
            }
            let filter = FalseNegativeFilter::new(&pool, &vectors, ctx.config.forge.thresholds()?)?;
            let (kept, rep) = filter_false_negatives(ex, &filter, &lookup)?;
            write_jsonl(&output, &kept)?;
            print_json(&rep)?;
            m.note("filter", rep);
            finish(m, &[&output])
        }
        ForgeCmd::Groups {
            pool,
            retriever,
            queries,
            no_filter,
            output,
        } => {
            let pool = load_pool(&pool, &mut m)?;
            m.input(&queries)?;
            let qf = QueryFile::read(&queries)?;
            let engine = engine(ctx, &pool, &retriever, Some(&qf), &mut m)?;
            let rel = qf.relevance()?;
            let qs = qf.queries()?;
            let filter_vectors;
            let filter = if no_filter {
                None
            } else {
                filter_vectors = match &engine {
                    Engine::Dense { index, .. } | Engine::Precomputed { index, .. } => index.clone(),
                    Engine::Bm25(_) => {
                        let emb = embedder(
                            ctx,
                            &retriever.embedder,
                            file_dim(retriever.embeddings.as_deref())?,
                            &mut m,
                        )?;
                        pool_index(
                            ctx,
                            &pool,
                            retriever.embeddings.as_deref(),
                            &emb,
                            ctx.format(None),
                            &mut m,
                        )?
                    }
                };
                Some(FalseNegativeFilter::new(
                    &pool,
                    &filter_vectors,
                    ctx.config.forge.thresholds()?,
                )?)
            };
            let (groups, stats) =
                build_listwise_groups(&qs, &engine, ctx.config.forge.groups(), &rel, filter.as_ref())?;
            write_jsonl(&output, &groups)?;
            print_json(&stats)?;
            m.note("groups", stats);
            finish(m, &[&output])
        }
        ForgeCmd::Qc {
            pool,
            queries,
            style,
            output,
        } => {
            let pool = load_pool(&pool, &mut m)?;
            m.input(&queries)?;
            let records: Vec<QueryRecord> = read_jsonl(&queries)?;
            #[derive(Serialize)]
            struct QcRow<'a> {
                query_id: &'a str,
                skill_id: &'a str,
                style: QueryStyle,
                violations: Vec<skillmux_core::forge::QcViolation>,
            }
            let mut rows = Vec::new();
            for r in &records {
                let skill = pool
                    .get(&r.skill_id)
                    .ok_or_else(|| anyhow!("query `{}`: unknown skill `{}`", r.query_id, r.skill_id))?;
                let st = r
                    .style
                    .or(style)
                    .ok_or_else(|| anyhow!("query `{}` has no style; pass --style", r.query_id))?;
                rows.push(QcRow {
                    query_id: &r.query_id,
                    skill_id: &r.skill_id,
                    style: st,
                    violations: qc_check(&r.text, skill, st),
                });
            }
            let failed = rows.iter().filter(|r| !r.violations.is_empty()).count();
            eprintln!("{failed} of {} queries failed QC", rows.len());
            match output {
                Some(out) => {
                    write_jsonl(&out, &rows)?;
                    m.note("failed", failed);
                    finish(m, &[&out])
                }
                None => {
                    for r in &rows {
                        println!("{}", serde_json::to_string(r)?);
                    }
                    Ok(())
                }
            }
        }
        ForgeCmd::Prompts {
            list,
            template,
            pool,
            skill,
            var,
            generate,
            style,
            output,
        } => {
            if list {
                for n in prompts::builtin_names() {
                    let t = prompts::builtin(n)?;
                    let ph: Vec<&str> = t.placeholders.iter().map(String::as_str).collect();
                    println!("{n} v{}: {}", t.version, ph.join(", "));
                }
                return Ok(());
            }
            let skills: Vec<Skill> = match &pool {
                Some(p) => {
                    m.input(p)?;
                    let pool = read_pool(p, Tier::Custom)?;
                    if skill.is_empty() {
                        pool.into_skills()
                    } else {
                        skill
                            .iter()
                            .map(|id| pool.get(id).cloned().ok_or_else(|| anyhow!("unknown skill `{id}`")))
                            .collect::<Result<_>>()?
                    }
                }
                None => Vec::new(),
            };
            let extra: Vec<(String, String)> = var
                .iter()
                .map(|kv| {
                    kv.split_once('=')
                        .map(|(k, v)| (k.to_string(), v.to_string()))
                        .ok_or_else(|| anyhow!("--var expects KEY=VALUE, got `{kv}`"))
                })
                .collect::<Result<_>>()?;
            if generate {
                let style = style.expect("clap requires --style");
                let output = output.expect("clap requires --output");
                let t = prompts::builtin(template.as_deref().unwrap_or(style_template(style)))?;
                let chat = chat_client(ctx)?;
                m.provider("generation", chat.identity(), Some(chat_endpoint(ctx)));
                let temperature = ctx.config.providers.generation_temperature;
                let mut records = Vec::new();
                let mut failed = Vec::new();
                for s in &skills {
                    let rendered = t.render(&skill_values(&t, s))?;
                    let g = generate_with_qc(s, style, ctx.config.forge.qc_max_attempts, |_| {
                        chat.complete_rendered(&rendered, temperature)
                            .map(|r| r.trim().to_string())
                    });
                    match g.text {
                        Some(text) => records.push(QueryRecord {
                            query_id: format!("{}-{}", s.id, style),
                            skill_id: s.id.clone(),
                            text,
                            style: Some(style),
                            attempts: g.attempts,
                        }),
                        None => failed.push(s.id.clone()),
                    }
                }
                write_jsonl(&output, &records)?;
                eprintln!("{} queries accepted, {} skills failed QC", records.len(), failed.len());
                m.note("template", format!("{} v{}", t.name, t.version));
                m.note("failed_skills", &failed);
                return finish(m, &[&output]);
            }
            let t = prompts::builtin(template.as_deref().expect("clap requires --template"))?;
            let render_one = |s: Option<&Skill>| -> Result<()> {
                let mut values: BTreeMap<&str, String> = s.map(|s| skill_values(&t, s)).unwrap_or_default();
                for (k, v) in &extra {
                    values.insert(k.as_str(), v.clone());
                }
                let r = t.render(&values)?;
                if let Some(sys) = &r.system {
                    println!("[system]\n{sys}\n");
                }
                println!("[user]\n{}\n", r.user);
                Ok(())
            };
            if skills.is_empty() {
                render_one(None)
            } else {
                skills.iter().try_for_each(|s| render_one(Some(s)))
            }
        }
    }
}

#[derive(Serialize)]
struct GradientReport {
    instances: usize,
    tolerance: f64,
    max_error_info_nce: f64,
    max_error_listwise: f64,
    max_error_pointwise: f64,
    uniform_info_nce_b2: f64,
    uniform_listwise_n20: f64,
    zero_logit_bce: f64,
    passed: bool,
}

fn objectives_cmd(cmd: ObjectivesCmd) -> Result<()> {
    let ObjectivesCmd::CheckGradients {
        instances,
        tolerance,
        output,
    } = cmd;
    let enc = Temperature::ENCODER;
    let lw = Temperature::new(1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let step = 1e-6;
    let (mut e_nce, mut e_lw, mut e_bce) = (0f64, 0f64, 0f64);
    for _ in 0..instances {
        let b = rng.gen_range(2..=6);
        let sims: Vec<f64> = (0..b * b).map(|_| rng.gen_range(-1.0..1.0)).collect();
        e_nce = e_nce.max(finite_diff_check(checks::info_nce_fn(b, enc), &sims, step));
        let n = rng.gen_range(2..=20);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let pos = rng.gen_range(0..n);
        e_lw = e_lw.max(finite_diff_check(checks::listwise_fn(pos, lw), &scores, step));
        let labels: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
        e_bce = e_bce.max(finite_diff_check(checks::pointwise_fn(labels), &scores, step));
    }
    let uniform = SimilarityMatrix::new(vec![0.5; 4])?;
    let (u_nce, _) = info_nce(&uniform, enc);
    let (u_lw, _) = listwise_ce(&ListwiseScores::new(vec![0.0; 20], 0)?, lw);
    let (z_bce, _) = pointwise_bce(&[0.0, 0.0], &[1.0, 0.0])?;
    let closed = [(u_nce, 2f64.ln()), (u_lw, 20f64.ln()), (z_bce, 2f64.ln())];
    let passed =
        [e_nce, e_lw, e_bce].iter().all(|e| *e < tolerance) && closed.iter().all(|(a, b)| (a - b).abs() < 1e-10);
    let r = GradientReport {
        instances,
        tolerance,
        max_error_info_nce: e_nce,
        max_error_listwise: e_lw,
        max_error_pointwise: e_bce,
        uniform_info_nce_b2: u_nce,
        uniform_listwise_n20: u_lw,
        zero_logit_bce: z_bce,
        passed,
    };
    print_json(&r)?;
    if let Some(out) = output {
        write_json(&out, &r)?;
    }
    if !passed {
        bail!("gradient check failed");
    }
    Ok(())
}

/// `SYSTEM[:TIER]=PATH` or `[TIER=]PATH`.
struct RunSpec {
    system: String,
    tier: Option<String>,
    path: PathBuf,
}

fn parse_run_spec(spec: &str, with_system: bool) -> RunSpec {
    let (label, path) = match spec.split_once('=') {
        Some((l, p)) => (Some(l), PathBuf::from(p)),
        None => (None, PathBuf::from(spec)),
    };
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match (with_system, label) {
        (true, Some(l)) => match l.split_once(':') {
            Some((s, t)) => RunSpec {
                system: s.to_string(),
                tier: Some(t.to_string()),
                path,
            },
            None => RunSpec {
                system: l.to_string(),
                tier: None,
                path,
            },
        },
        (true, None) => RunSpec {
            system: stem,
            tier: None,
            path,
        },
        (false, l) => RunSpec {
            system: String::new(),
            tier: l.map(str::to_string),
            path,
        },
    }
}

fn load_runs(spec: &RunSpec, m: &mut RunManifest) -> Result<Vec<QueryRun>> {
    m.input(&spec.path)?;
    let mut runs = read_run(&spec.path)?;
    if let Some(t) = &spec.tier {
        for r in &mut runs {
            r.tier.get_or_insert_with(|| t.clone());
        }
    }
    Ok(runs)
}

/// Runs grouped by system, in first-mention order.
fn load_systems(specs: &[String], m: &mut RunManifest) -> Result<Vec<(String, Vec<QueryRun>)>> {
    let mut out: Vec<(String, Vec<QueryRun>)> = Vec::new();
    for s in specs {
        let spec = parse_run_spec(s, true);
        let runs = load_runs(&spec, m)?;
        match out.iter_mut().find(|(n, _)| *n == spec.system) {
            Some((_, v)) => v.extend(runs),
            None => out.push((spec.system, runs)),
        }
    }
    Ok(out)
}

fn load_relevance(path: &Path, m: &mut RunManifest) -> Result<RelevanceSet> {
    m.input(path)?;
    Ok(QueryFile::read(path)?.relevance()?)
}

fn report_rows(reports: &[(String, MetricsReport)]) -> Vec<(&str, &MetricsReport)> {
    reports.iter().map(|(n, r)| (n.as_str(), r)).collect()
}

fn write_report<T: Serialize>(output: Option<PathBuf>, value: &T, m: RunManifest) -> Result<()> {
    if let Some(out) = output {
        write_json(&out, value)?;
        finish(m, &[&out])?;
    }
    Ok(())
}

fn eval_cmd(ctx: &Ctx, cmd: EvalCmd) -> Result<()> {
    let mut m = ctx.manifest();
    match cmd {
        EvalCmd::Run {
            runs,
            relevance,
            pool,
            output,
        } => {
            let rel = load_relevance(&relevance, &mut m)?;
            let systems = load_systems(&runs, &mut m)?;
            let quartiles = match &pool {
                Some(p) => {
                    m.input(p)?;
                    Some(quartile_stratify(&rel, &read_pool(p, Tier::Custom)?)?)
                }
                None => None,
            };
            let labels = quartiles.as_ref().map(|q| q.query_labels());
            let external: Vec<(&str, &BTreeMap<String, String>)> =
                labels.iter().map(|l| ("desc_quartile", l)).collect();
            let reports: Vec<(String, MetricsReport)> = systems
                .into_iter()
                .map(|(name, r)| Ok((name, evaluate_run(&r, &rel, &external)?)))
                .collect::<Result<_>>()?;
            let rows = report_rows(&reports);
            println!("{}", report::metrics_table("System", &rows));
            println!("{}", report::tier_table("System", &rows));
            println!("{}", report::strata_table("System", "cardinality", &rows));
            if reports.iter().any(|(_, r)| r.strata.contains_key("difficulty")) {
                println!("{}", report::strata_table("System", "difficulty", &rows));
            }
            if let Some(q) = &quartiles {
                println!(
                    "{}\n{}",
                    report::quartile_cuts(q),
                    report::quartile_table("System", &rows)
                );
            }
            for (name, r) in &reports {
                if !r.missing.is_empty() || !r.empty_rankings.is_empty() {
                    eprintln!(
                        "{name}: {} relevance queries absent from the run (excluded from means), {} empty rankings",
                        r.missing.len(),
                        r.empty_rankings.len()
                    );
                }
            }
            let json: BTreeMap<&str, &MetricsReport> = rows.iter().copied().collect();
            write_report(output, &json, m)
        }
        EvalCmd::Decompose {
            encoder,
            pipeline,
            relevance,
            output,
        } => {
            let rel = load_relevance(&relevance, &mut m)?;
            let mut enc = Vec::new();
            for s in &encoder {
                enc.extend(load_runs(&parse_run_spec(s, false), &mut m)?);
            }
            let mut pipe = Vec::new();
            for s in &pipeline {
                pipe.extend(load_runs(&parse_run_spec(s, false), &mut m)?);
            }
            let d = decompose(&enc, &pipe, &rel)?;
            println!("{}", report::decomposition_table(&d));
            write_report(output, &d, m)
        }
        EvalCmd::Ablate {
            pool,
            retriever,
            rerank,
            queries,
            ks,
            output,
        } => {
            let pool = load_pool(&pool, &mut m)?;
            m.input(&queries)?;
            let qf = QueryFile::read(&queries)?;
            let engine = engine(ctx, &pool, &retriever, Some(&qf), &mut m)?;
            let rr = reranker(ctx, &rerank, Some(&qf), &mut m)?;
            let qs: Vec<EvalQuery> = qf.queries()?;
            let table = topk_ablation(&qs, &engine, &rr.stage(), &pool, &ks, &qf.relevance()?)?;
            let label = format!("{}+{}", engine.name(), rr.stage().name());
            println!("{}", report::ablation_table("Pipeline", &[(&label, &table)]));
            println!("{}", report::recall_curve_table(&table, &ks));
            write_report(output, &table, m)
        }
        EvalCmd::Stratify {
            runs,
            relevance,
            pool,
            output,
        } => {
            let rel = load_relevance(&relevance, &mut m)?;
            m.input(&pool)?;
            let q = quartile_stratify(&rel, &read_pool(&pool, Tier::Custom)?)?;
            let labels = q.query_labels();
            let systems = load_systems(&runs, &mut m)?;
            let reports: Vec<(String, MetricsReport)> = systems
                .into_iter()
                .map(|(name, r)| Ok((name, evaluate_run(&r, &rel, &[("desc_quartile", &labels)])?)))
                .collect::<Result<_>>()?;
            println!(
                "{}\n{}",
                report::quartile_cuts(&q),
                report::quartile_table("System", &report_rows(&reports))
            );
            #[derive(Serialize)]
            struct Out<'a> {
                quartiles: &'a skillmux_core::eval::QuartileStrata,
                reports: BTreeMap<&'a str, &'a MetricsReport>,
            }
            let out = Out {
                quartiles: &q,
                reports: reports.iter().map(|(n, r)| (n.as_str(), r)).collect(),
            };
            write_report(output, &out, m)
        }
    }
}

fn bench_cmd(ctx: &Ctx, cmd: BenchCmd) -> Result<()> {
    let (args, concurrency) = match cmd {
        BenchCmd::Latency(a) => (a, None),
        BenchCmd::Throughput { args, concurrency } => {
            let c = concurrency.unwrap_or(ctx.config.bench.concurrency);
            (args, Some(c))
        }
    };
    let mut m = ctx.manifest();
    let pool = load_pool(&args.pool, &mut m)?;
    m.input(&args.queries)?;
    let qf = QueryFile::read(&args.queries)?;
    let engine = engine(ctx, &pool, &args.retriever, Some(&qf), &mut m)?;
    let rr = reranker(ctx, &args.rerank, Some(&qf), &mut m)?;
    let stage = rr.stage();
    let k = args.k.unwrap_or(ctx.config.retrieval.k);
    let warmup = args.warmup.unwrap_or(ctx.config.bench.warmup);
    let texts: Vec<String> = qf.queries()?.into_iter().map(|q| q.text).collect();
    let once = |q: &str| route(q, &engine, &stage, &pool, k).map(|_| ());
    let r = match concurrency {
        None => time_queries(&texts, warmup, once),
        Some(c) => throughput(&texts, warmup, c, once),
    };
    println!("{}", report::latency_table(&[(&args.label, &r)]));
    if r.is_partial() {
        eprintln!(
            "{} of {} queries failed; statistics cover successes only",
            r.failures,
            texts.len()
        );
    }
    write_report(args.output, &r, m)
}

/// Parses `argv`, runs the command and maps errors to an exit code.
pub fn main_with(argv: Vec<String>) -> i32 {
    let cli = Cli::parse_from(&argv);
    match run(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
