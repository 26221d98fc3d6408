//! Blocking HTTP clients for embedding, reranking and chat-completion services.
//!
//! Wire formats:
//!
//! - embedding: `POST {texts, kind, model?}` → `{vectors: [[f32]]}`
//! - reranker: `POST {query, documents, instruction, model?}` → `{scores: [f64]}`;
//!   `query` is cut to the query cap and each document is the flattened
//!   `name | description | body` text under the reranker caps
//! - chat: OpenAI-style `POST {model, messages, temperature}` →
//!   `{choices: [{message: {content}}]}`

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use skillmux_core::corpus::{flatten_skill, truncate_chars, truncate_query, FieldCaps, InputFormat, Skill, SkillPool};
use skillmux_core::dense::{
    assemble_index, embed_batch_with_retry, pool_texts, DenseError, EmbedOptions, EmbeddingProvider, TextKind,
    VectorIndex,
};
use skillmux_core::forge::EquivalenceJudge;
use skillmux_core::rerank::{JudgePrompt, JudgeProvider, RerankProvider, RERANK_INSTRUCTION};
use skillmux_core::ProviderError;

use crate::config::{ConfigError, ProviderConfig};
use crate::prompts::{self, Rendered};

/// Endpoint, auth and retry settings shared by all clients.
#[derive(Debug, Clone)]
pub struct HttpSettings {
    pub endpoint: String,
    pub model: Option<String>,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_retries: usize,
}

impl HttpSettings {
    /// `role` names the config table, e.g. `providers.embedding`.
    pub fn from_config(role: &str, cfg: &ProviderConfig) -> Result<Self, ConfigError> {
        let endpoint = cfg
            .endpoint
            .clone()
            .filter(|e| !e.is_empty())
            .ok_or_else(|| ConfigError::Missing(format!("{role}.endpoint")))?;
        Ok(Self {
            endpoint,
            model: cfg.model.clone(),
            api_key: cfg.api_key()?,
            timeout: Duration::from_secs(cfg.timeout_secs.max(1)),
            max_retries: cfg.max_retries,
        })
    }

    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: None,
            api_key: None,
            timeout: Duration::from_secs(60),
            max_retries: 0,
        }
    }
}

#[derive(Debug)]
struct Transport {
    name: &'static str,
    settings: HttpSettings,
    client: Client,
}

impl Transport {
    fn new(name: &'static str, settings: HttpSettings) -> Result<Self, ProviderError> {
        let client = Client::builder()
            .timeout(settings.timeout)
            .build()
            .map_err(|e| ProviderError::new(name, e.to_string()))?;
        Ok(Self { name, settings, client })
    }

    fn post_once<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R, ProviderError> {
        let mut req = self.client.post(&self.settings.endpoint).json(body);
        if let Some(key) = &self.settings.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() || e.is_request() {
                ProviderError::retryable(self.name, e.to_string())
            } else {
                ProviderError::new(self.name, e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            let msg = format!("HTTP {status}: {}", truncate_chars(&text, 200));
            return Err(if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
                ProviderError::retryable(self.name, msg)
            } else {
                ProviderError::new(self.name, msg)
            });
        }
        resp.json::<R>()
            .map_err(|e| ProviderError::new(self.name, format!("malformed response: {e}")))
    }

    /// Retries retryable failures up to `max_retries` extra times.
    fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R, ProviderError> {
        let mut attempt = 0;
        loop {
            match self.post_once(body) {
                Err(e) if e.retryable && attempt < self.settings.max_retries => {
                    attempt += 1;
                    log::warn!("{} request failed (attempt {attempt}): {}", self.name, e.message);
                    std::thread::sleep(Duration::from_millis(100 * (1 << attempt.min(6))));
                }
                other => return other,
            }
        }
    }

    fn identity(&self) -> String {
        match &self.settings.model {
            Some(m) => format!("{}:{}@{}", self.name, m, self.settings.endpoint),
            None => format!("{}@{}", self.name, self.settings.endpoint),
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
    kind: TextKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

/// Embedding service client. Retries inside one `embed` call are left to
/// the caller ([`embed_batch_with_retry`]); transport retries are off.
#[derive(Debug)]
pub struct EmbeddingClient {
    transport: Transport,
    dimension: OnceLock<usize>,
}

impl EmbeddingClient {
    pub fn new(mut settings: HttpSettings, dimension: Option<usize>) -> Result<Self, ProviderError> {
        settings.max_retries = 0;
        let cell = OnceLock::new();
        if let Some(d) = dimension {
            let _ = cell.set(d);
        }
        Ok(Self {
            transport: Transport::new("embedding", settings)?,
            dimension: cell,
        })
    }

    fn request(&self, texts: &[String], kind: TextKind) -> Result<Vec<Vec<f32>>, ProviderError> {
        let resp: EmbedResponse = self.transport.post(&EmbedRequest {
            texts,
            kind,
            model: self.transport.settings.model.as_deref(),
        })?;
        if resp.vectors.len() != texts.len() {
            return Err(ProviderError::new(
                "embedding",
                format!("{} vectors for {} texts", resp.vectors.len(), texts.len()),
            ));
        }
        Ok(resp.vectors)
    }
}

impl EmbeddingProvider for EmbeddingClient {
    fn dimension(&self) -> usize {
        *self.dimension.get_or_init(|| {
            self.request(&["dimension probe".to_string()], TextKind::Document)
                .ok()
                .and_then(|v| v.first().map(Vec::len))
                .unwrap_or(0)
        })
    }

    fn embed(&self, texts: &[String], kind: TextKind) -> Result<Vec<Vec<f32>>, ProviderError> {
        let out = self.request(texts, kind)?;
        let _ = self.dimension.set(out.first().map_or(0, Vec::len));
        Ok(out)
    }

    fn identity(&self) -> String {
        self.transport.identity()
    }
}

/// Embeds a pool with up to `in_flight` concurrent batch requests; the
/// result keeps pool order.
pub fn embed_pool_concurrent<P: EmbeddingProvider + Sync + ?Sized>(
    pool: &SkillPool,
    provider: &P,
    caps: &FieldCaps,
    format: InputFormat,
    options: &EmbedOptions,
    in_flight: usize,
) -> Result<VectorIndex, DenseError> {
    if pool.is_empty() {
        return Err(DenseError::EmptyPool);
    }
    let texts = pool_texts(pool, caps, format);
    let batches: Vec<&[String]> = texts.chunks(options.batch_size.max(1)).collect();
    type Slot = Option<Result<Vec<Vec<f32>>, DenseError>>;
    let results: Mutex<Vec<Slot>> = Mutex::new((0..batches.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..in_flight.clamp(1, batches.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= batches.len() {
                    break;
                }
                let r = embed_batch_with_retry(provider, batches[i], TextKind::Document, options.max_retries);
                let failed = r.is_err();
                results.lock().expect("no panics while holding the lock")[i] = Some(r);
                if failed {
                    next.store(batches.len(), Ordering::Relaxed);
                }
            });
        }
    });
    let mut vectors = Vec::with_capacity(texts.len());
    for r in results.into_inner().expect("workers joined").into_iter().flatten() {
        vectors.extend(r?);
    }
    assemble_index(pool, vectors, provider.dimension(), &options.norm_policy)
}

#[derive(Serialize)]
struct RerankRequest<'a> {
    query: &'a str,
    documents: Vec<String>,
    instruction: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

#[derive(Deserialize)]
struct RerankResponse {
    scores: Vec<f64>,
}

#[derive(Debug)]
pub struct RerankClient {
    transport: Transport,
    caps: FieldCaps,
    format: InputFormat,
}

impl RerankClient {
    pub fn new(settings: HttpSettings, caps: FieldCaps, format: InputFormat) -> Result<Self, ProviderError> {
        Ok(Self {
            transport: Transport::new("reranker", settings)?,
            caps,
            format,
        })
    }
}

impl RerankProvider for RerankClient {
    fn score(&self, query: &str, candidates: &[&Skill]) -> Result<Vec<f64>, ProviderError> {
        let req = RerankRequest {
            query: truncate_query(query, &self.caps),
            documents: candidates
                .iter()
                .map(|s| flatten_skill(s, self.format, &self.caps))
                .collect(),
            instruction: RERANK_INSTRUCTION,
            model: self.transport.settings.model.as_deref(),
        };
        let resp: RerankResponse = self.transport.post(&req)?;
        if resp.scores.len() != candidates.len() {
            return Err(ProviderError::new(
                "reranker",
                format!("{} scores for {} documents", resp.scores.len(), candidates.len()),
            ));
        }
        Ok(resp.scores)
    }

    fn identity(&self) -> String {
        self.transport.identity()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    messages: Vec<ChatMessage>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

/// Chat-completion client used for listwise judging, equivalence judging
/// and query generation.
#[derive(Debug)]
pub struct ChatClient {
    transport: Transport,
    /// Used for judging.
    pub temperature: f64,
}

impl ChatClient {
    pub fn new(settings: HttpSettings, temperature: f64) -> Result<Self, ProviderError> {
        Ok(Self {
            transport: Transport::new("chat", settings)?,
            temperature,
        })
    }

    pub fn complete(&self, system: Option<&str>, user: &str, temperature: f64) -> Result<String, ProviderError> {
        let mut messages = Vec::with_capacity(2);
        if let Some(s) = system {
            messages.push(ChatMessage {
                role: "system".into(),
                content: s.to_string(),
            });
        }
        messages.push(ChatMessage {
            role: "user".into(),
            content: user.to_string(),
        });
        let resp: ChatResponse = self.transport.post(&ChatRequest {
            model: self.transport.settings.model.as_deref(),
            messages,
            temperature,
        })?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::new("chat", "response has no message content"))
    }

    pub fn complete_rendered(&self, prompt: &Rendered, temperature: f64) -> Result<String, ProviderError> {
        self.complete(prompt.system.as_deref(), &prompt.user, temperature)
    }
}

impl JudgeProvider for ChatClient {
    fn judge(&self, prompt: &JudgePrompt) -> Result<String, ProviderError> {
        self.complete(Some(&prompt.system), &prompt.user, self.temperature)
    }

    fn identity(&self) -> String {
        self.transport.identity()
    }
}

/// Parses an EQUIVALENT / DISTINCT verdict.
pub fn parse_equivalence(reply: &str) -> Result<bool, ProviderError> {
    let word = reply
        .split(|c: char| !c.is_ascii_alphabetic())
        .find(|w| !w.is_empty())
        .unwrap_or("")
        .to_ascii_uppercase();
    match word.as_str() {
        "EQUIVALENT" | "YES" => Ok(true),
        "DISTINCT" | "NO" => Ok(false),
        _ => Err(ProviderError::new(
            "chat",
            format!("unrecognised verdict `{}`", truncate_chars(reply, 80)),
        )),
    }
}

/// Judges functional equivalence with the `equivalence` template.
pub struct ChatEquivalenceJudge<'a> {
    pub chat: &'a ChatClient,
    pub caps: FieldCaps,
}

impl EquivalenceJudge for ChatEquivalenceJudge<'_> {
    fn equivalent(&self, a: &Skill, b: &Skill) -> Result<bool, ProviderError> {
        let t = prompts::builtin("equivalence").map_err(|e| ProviderError::new("chat", e.to_string()))?;
        let field = |s: &str, cap: usize| truncate_chars(s, cap).to_string();
        let values = [
            ("name_a", a.name.clone()),
            ("description_a", field(&a.description, self.caps.description_chars)),
            ("body_a", field(&a.body, self.caps.body_chars)),
            ("name_b", b.name.clone()),
            ("description_b", field(&b.description, self.caps.description_chars)),
            ("body_b", field(&b.body, self.caps.body_chars)),
        ]
        .into_iter()
        .collect();
        let rendered = t
            .render(&values)
            .map_err(|e| ProviderError::new("chat", e.to_string()))?;
        parse_equivalence(&self.chat.complete_rendered(&rendered, self.chat.temperature)?)
    }

    fn identity(&self) -> String {
        self.chat.transport.identity()
    }
}
