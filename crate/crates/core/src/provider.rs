//! Embedding and generation backends.
//!
//! [`HttpProvider`] talks to the model sidecar over JSON:
//!
//! * `POST /v1/embed` `{"texts": [..]}` -> `{"dim": n, "vectors": [[..]]}`
//! * `POST /v1/generate` `{"instruction", "passage", "num_sequences",
//!   "strategy", "max_new_tokens"}` -> `[{"text", "gen_prob"}]`
//! * `GET /healthz` -> `{"model", "dim"}`
//!
//! [`HashEmbedder`] and [`FixtureGenerator`] are offline stand-ins with
//! fully deterministic output.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datamodel::{EmbeddingVector, QueryKind};
use crate::ingest::{self, IngestError};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    BackendUnavailable { attempts: usize, message: String },
    #[error("bad response from backend: {0}")]
    BadResponse(String),
    #[error(transparent)]
    Fixture(#[from] IngestError),
}

pub trait Embedder: Send + Sync {
    /// One vector per input text, in input order, all of the same dimension.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let mut out = self.embed_batch(&[text])?;
        out.pop()
            .ok_or_else(|| ProviderError::BadResponse("empty embedding response".into()))
    }
}

pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<GenerationResult>, ProviderError>;
}

fn check_texts(texts: &[&str]) -> Result<(), ProviderError> {
    if texts.is_empty() {
        return Err(ProviderError::InvalidRequest("no texts to embed".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(ProviderError::InvalidRequest(format!("text {i} is empty")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionTemplate {
    pub kind: QueryKind,
    pub text: String,
}

/// The instruction prompts used for generation, one per query kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSet(Vec<InstructionTemplate>);

impl Default for InstructionSet {
    fn default() -> Self {
        Self(vec![
            InstructionTemplate {
                kind: QueryKind::Keywords,
                text: "Read the passage and summarize keywords.".into(),
            },
            InstructionTemplate {
                kind: QueryKind::Question,
                text: "Read the passage and generate a question.".into(),
            },
        ])
    }
}

impl InstructionSet {
    pub fn new(templates: Vec<InstructionTemplate>) -> Result<Self, ProviderError> {
        if templates.is_empty() {
            return Err(ProviderError::InvalidRequest("no instruction templates".into()));
        }
        if templates.iter().any(|t| t.text.trim().is_empty()) {
            return Err(ProviderError::InvalidRequest("empty instruction template".into()));
        }
        Ok(Self(templates))
    }

    pub fn templates(&self) -> &[InstructionTemplate] {
        &self.0
    }

    pub fn contains(&self, instruction: &str) -> bool {
        self.0.iter().any(|t| t.text == instruction)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub passage_id: String,
    pub kind: QueryKind,
    pub instruction: String,
    pub passage_text: String,
    pub num_sequences: usize,
    pub max_new_tokens: usize,
}

impl GenerationRequest {
    /// Builds a request whose instruction must be one of `templates`
    /// unless `allow_override` is set.
    pub fn new(
        templates: &InstructionSet,
        template: &InstructionTemplate,
        passage_id: impl Into<String>,
        passage_text: impl Into<String>,
        num_sequences: usize,
        max_new_tokens: usize,
        allow_override: bool,
    ) -> Result<Self, ProviderError> {
        if !allow_override && !templates.contains(&template.text) {
            return Err(ProviderError::InvalidRequest(format!(
                "instruction {:?} is not a configured template",
                template.text
            )));
        }
        if num_sequences == 0 || max_new_tokens == 0 {
            return Err(ProviderError::InvalidRequest(
                "num_sequences and max_new_tokens must be positive".into(),
            ));
        }
        let passage_text = passage_text.into();
        if passage_text.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("empty passage".into()));
        }
        Ok(Self {
            passage_id: passage_id.into(),
            kind: template.kind,
            instruction: template.text.clone(),
            passage_text,
            num_sequences,
            max_new_tokens,
        })
    }
}

/// One generated sequence and its length-normalized probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub gen_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bertscore_f1: Option<f64>,
}

impl GenerationResult {
    fn validate(self) -> Result<Self, ProviderError> {
        if !(self.gen_prob.is_finite() && self.gen_prob > 0.0 && self.gen_prob <= 1.0) {
            return Err(ProviderError::BadResponse(format!(
                "gen_prob {} outside (0, 1]",
                self.gen_prob
            )));
        }
        if let Some(s) = self.bertscore_f1 {
            if !(0.0..=1.0).contains(&s) {
                return Err(ProviderError::BadResponse(format!("bertscore_f1 {s} outside [0, 1]")));
            }
        }
        Ok(self)
    }
}

/// How [`HashEmbedder`] keys its vectors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HashMode {
    /// One pseudo-random unit vector per distinct text.
    #[default]
    Text,
    /// Normalized sum of per-token vectors, so texts sharing words land
    /// near each other.
    Tokens,
}

/// Seeded pseudo-random embeddings. Output depends only on
/// `(seed, text)` and uses no floating-point transcendental functions, so it
/// is identical across platforms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
    mode: HashMode,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self, ProviderError> {
        if dim == 0 {
            return Err(ProviderError::InvalidRequest("dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            seed,
            mode: HashMode::Text,
        })
    }

    pub fn with_mode(mut self, mode: HashMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn raw(&self, key: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(key.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        (0..self.dim)
            .map(|_| f64::from(rng.next_u32()) / 2_147_483_648.0 - 1.0)
            .collect()
    }

    fn vector(&self, text: &str) -> EmbeddingVector {
        let mut acc = match self.mode {
            HashMode::Text => self.raw(text),
            HashMode::Tokens => {
                let mut acc = vec![0f64; self.dim];
                let lower = text.to_lowercase();
                for tok in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
                    for (a, v) in acc.iter_mut().zip(self.raw(tok)) {
                        *a += v;
                    }
                }
                if acc.iter().all(|&v| v == 0.0) {
                    self.raw(text)
                } else {
                    acc
                }
            }
        };
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            acc[0] = 1.0;
        } else {
            acc.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector::new(acc.into_iter().map(|v| v as f32).collect())
            .expect("finite by construction")
    }
}

impl Embedder for HashEmbedder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        check_texts(texts)?;
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Serves canned generations keyed by passage id and query kind.
#[derive(Debug, Clone, Default)]
pub struct FixtureGenerator {
    canned: HashMap<(String, QueryKind), Vec<GenerationResult>>,
}

impl FixtureGenerator {
    pub fn from_synthetic(set: &ingest::SyntheticSet) -> Self {
        let mut canned: HashMap<(String, QueryKind), Vec<GenerationResult>> = HashMap::new();
        for (pid, q) in set {
            canned
                .entry((pid.clone(), q.kind()))
                .or_default()
                .push(GenerationResult {
                    text: q.text().to_string(),
                    gen_prob: q.gen_prob(),
                    bertscore_f1: q.bertscore_f1(),
                });
        }
        Self { canned }
    }

    /// Reads a synthetic-query JSONL file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        Ok(Self::from_synthetic(&ingest::load_synthetic(path)?))
    }
}

impl Generator for FixtureGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<GenerationResult>, ProviderError> {
        Ok(self
            .canned
            .get(&(request.passage_id.clone(), request.kind))
            .map(|v| v.iter().take(request.num_sequences).cloned().collect())
            .unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Health {
    pub model: String,
    pub dim: usize,
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedReply {
    dim: usize,
    vectors: Vec<Vec<f32>>,
}

#[derive(Serialize)]
struct GenerateBody<'a> {
    instruction: &'a str,
    passage: &'a str,
    num_sequences: usize,
    strategy: &'a str,
    max_new_tokens: usize,
}

/// Blocking JSON client for the model sidecar.
///
/// Embedding requests are split into batches of `batch_size`; at most
/// `max_in_flight` batches are outstanding at once. Connection failures and
/// 5xx replies are retried with exponential backoff; 4xx replies are not.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    batch_size: usize,
    max_in_flight: usize,
    retries: usize,
    backoff: Duration,
    decoding: String,
}

impl HttpProvider {
    pub const DEFAULT_BATCH_SIZE: usize = 32;
    pub const DEFAULT_IN_FLIGHT: usize = 4;

    pub fn new(endpoint: impl Into<String>) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .connect_timeout(Duration::from_secs(5))
            .build()
            .map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            batch_size: Self::DEFAULT_BATCH_SIZE,
            max_in_flight: Self::DEFAULT_IN_FLIGHT,
            retries: 3,
            backoff: Duration::from_millis(200),
            decoding: "greedy".into(),
        })
    }

    pub fn with_batching(mut self, batch_size: usize, max_in_flight: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self.max_in_flight = max_in_flight.max(1);
        self
    }

    pub fn with_retries(mut self, retries: usize, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    pub fn with_decoding(mut self, strategy: impl Into<String>) -> Self {
        self.decoding = strategy.into();
        self
    }

    pub fn health(&self) -> Result<Health, ProviderError> {
        let url = format!("{}/healthz", self.endpoint);
        let body = self.send(|| self.client.get(&url))?;
        serde_json::from_str(&body).map_err(|e| ProviderError::BadResponse(e.to_string()))
    }

    fn send(
        &self,
        build: impl Fn() -> reqwest::blocking::RequestBuilder,
    ) -> Result<String, ProviderError> {
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.saturating_pow(attempt as u32 - 1));
            }
            match build().send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp
                        .text()
                        .map_err(|e| ProviderError::BadResponse(e.to_string()))?;
                    if status.is_success() {
                        return Ok(text);
                    }
                    if status.is_client_error() {
                        return Err(ProviderError::BadResponse(format!("{status}: {text}")));
                    }
                    last = format!("{status}: {text}");
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(ProviderError::BackendUnavailable {
            attempts: self.retries + 1,
            message: last,
        })
    }

    fn embed_chunk(&self, texts: &[&str]) -> Result<(usize, Vec<Vec<f32>>), ProviderError> {
        let url = format!("{}/v1/embed", self.endpoint);
        let body = self.send(|| self.client.post(&url).json(&EmbedBody { texts }))?;
        let reply: EmbedReply =
            serde_json::from_str(&body).map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        if reply.vectors.len() != texts.len() {
            return Err(ProviderError::BadResponse(format!(
                "{} vectors for {} texts",
                reply.vectors.len(),
                texts.len()
            )));
        }
        if let Some(v) = reply.vectors.iter().find(|v| v.len() != reply.dim) {
            return Err(ProviderError::BadResponse(format!(
                "vector of length {} in a dim {} reply",
                v.len(),
                reply.dim
            )));
        }
        Ok((reply.dim, reply.vectors))
    }
}

impl Embedder for HttpProvider {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        check_texts(texts)?;
        let chunks: Vec<&[&str]> = texts.chunks(self.batch_size).collect();
        let mut replies = Vec::with_capacity(chunks.len());
        for wave in chunks.chunks(self.max_in_flight) {
            let results: Vec<_> = std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|chunk| s.spawn(move || self.embed_chunk(chunk)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embedding worker panicked"))
                    .collect()
            });
            for r in results {
                replies.push(r?);
            }
        }
        let dim = replies.first().map_or(0, |r| r.0);
        let mut out = Vec::with_capacity(texts.len());
        for (d, vectors) in replies {
            if d != dim {
                return Err(ProviderError::BadResponse(format!(
                    "dimension changed between batches: {dim} then {d}"
                )));
            }
            for v in vectors {
                out.push(EmbeddingVector::new(v).map_err(|e| ProviderError::BadResponse(e.to_string()))?);
            }
        }
        Ok(out)
    }
}

impl Generator for HttpProvider {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<GenerationResult>, ProviderError> {
        let url = format!("{}/v1/generate", self.endpoint);
        let body = GenerateBody {
            instruction: &request.instruction,
            passage: &request.passage_text,
            num_sequences: request.num_sequences,
            strategy: &self.decoding,
            max_new_tokens: request.max_new_tokens,
        };
        let reply = self.send(|| self.client.post(&url).json(&body))?;
        let results: Vec<GenerationResult> =
            serde_json::from_str(&reply).map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        if results.len() > request.num_sequences {
            return Err(ProviderError::BadResponse(format!(
                "{} sequences returned, {} requested",
                results.len(),
                request.num_sequences
            )));
        }
        results.into_iter().map(GenerationResult::validate).collect()
    }
}
