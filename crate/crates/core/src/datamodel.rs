//! Domain types shared by every stage of the pipeline.
//!
//! Constructors validate their invariants and reject bad input instead of
//! repairing it. Values are immutable once built; the `with_*` methods
//! consume a value and return an updated copy.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Invariant violations raised by the domain type constructors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("embedding must have at least one component")]
    EmptyEmbedding,
    #[error("embedding component {index} is not finite ({value})")]
    NonFinite { index: usize, value: f32 },
    #[error("generation probability must be finite and in (0, 1], got {0}")]
    GenProb(f64),
    #[error("bertscore F1 must be in [0, 1], got {0}")]
    BertScore(f64),
    #[error("keyword query has no comma-separated entries: {0:?}")]
    EmptyKeywords(String),
    #[error("w0 must be in [0, 1], got {0}")]
    W0(f64),
    #[error("unknown fusion strategy {0:?}")]
    UnknownStrategy(String),
    #[error("unknown query kind {0:?}")]
    UnknownKind(String),
    #[error("sentence {parent_id}#{ordinal} cannot carry a fused vector without an embedding")]
    FusedWithoutEmbedding { parent_id: String, ordinal: usize },
    #[error("sentence ordinals of passage {parent_id} must be 0..n in order, found {found} at position {position}")]
    SentenceOrdinal {
        parent_id: String,
        position: usize,
        found: usize,
    },
    #[error("sentence belongs to {found}, not passage {expected}")]
    SentenceParent { expected: String, found: String },
    #[error("passage id must be non-empty")]
    EmptyId,
    #[error("ranked list for {query_id} has increasing score at rank {rank}")]
    ScoreOrder { query_id: String, rank: usize },
    #[error("ranked list for {query_id} repeats passage {passage_id}")]
    DuplicateHit { query_id: String, passage_id: String },
    #[error("ranked list for {query_id} has a non-finite score at rank {rank}")]
    NonFiniteScore { query_id: String, rank: usize },
}

/// A dense sentence embedding. Components are finite `f32`s and there is at
/// least one of them.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, ValidationError> {
        if values.is_empty() {
            return Err(ValidationError::EmptyEmbedding);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(ValidationError::NonFinite { index, value });
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f32> {
        self.0
    }

    /// Euclidean norm, accumulated in `f64`.
    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scaled(&self, factor: f32) -> Result<Self, ValidationError> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }
}

impl AsRef<[f32]> for EmbeddingVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// The two instruction tasks used to produce synthetic queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Question,
    Keywords,
}

impl QueryKind {
    pub const ALL: [QueryKind; 2] = [QueryKind::Keywords, QueryKind::Question];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryKind::Question => "question",
            QueryKind::Keywords => "keywords",
        }
    }
}

impl fmt::Display for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryKind {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "question" => Ok(QueryKind::Question),
            "keywords" | "keyword" => Ok(QueryKind::Keywords),
            other => Err(ValidationError::UnknownKind(other.to_string())),
        }
    }
}

/// A question or keyword list generated from a passage.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticQuery {
    kind: QueryKind,
    text: String,
    gen_prob: f64,
    passed_filter: bool,
    bertscore_f1: Option<f64>,
    embedding: Option<EmbeddingVector>,
}

impl SyntheticQuery {
    pub fn new(
        kind: QueryKind,
        text: impl Into<String>,
        gen_prob: f64,
    ) -> Result<Self, ValidationError> {
        let text = text.into();
        if !(gen_prob.is_finite() && gen_prob > 0.0 && gen_prob <= 1.0) {
            return Err(ValidationError::GenProb(gen_prob));
        }
        if kind == QueryKind::Keywords && !text.split(',').any(|s| !s.trim().is_empty()) {
            return Err(ValidationError::EmptyKeywords(text));
        }
        Ok(Self {
            kind,
            text,
            gen_prob,
            passed_filter: false,
            bertscore_f1: None,
            embedding: None,
        })
    }

    pub fn with_bertscore(mut self, f1: f64) -> Result<Self, ValidationError> {
        if !(0.0..=1.0).contains(&f1) {
            return Err(ValidationError::BertScore(f1));
        }
        self.bertscore_f1 = Some(f1);
        Ok(self)
    }

    pub fn with_filter_verdict(mut self, passed: bool) -> Self {
        self.passed_filter = passed;
        self
    }

    pub fn with_embedding(mut self, embedding: EmbeddingVector) -> Self {
        self.embedding = Some(embedding);
        self
    }

    pub fn kind(&self) -> QueryKind {
        self.kind
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn gen_prob(&self) -> f64 {
        self.gen_prob
    }

    pub fn passed_filter(&self) -> bool {
        self.passed_filter
    }

    pub fn bertscore_f1(&self) -> Option<f64> {
        self.bertscore_f1
    }

    pub fn embedding(&self) -> Option<&EmbeddingVector> {
        self.embedding.as_ref()
    }
}

/// One sentence of a passage, with its own embedding and fused vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceUnit {
    parent_id: String,
    ordinal: usize,
    text: String,
    embedding: Option<EmbeddingVector>,
    fused: Option<EmbeddingVector>,
}

impl SentenceUnit {
    pub fn new(parent_id: impl Into<String>, ordinal: usize, text: impl Into<String>) -> Self {
        Self {
            parent_id: parent_id.into(),
            ordinal,
            text: text.into(),
            embedding: None,
            fused: None,
        }
    }

    pub fn with_embedding(mut self, embedding: EmbeddingVector) -> Self {
        self.embedding = Some(embedding);
        self
    }

    pub fn with_fused(mut self, fused: EmbeddingVector) -> Result<Self, ValidationError> {
        if self.embedding.is_none() {
            return Err(ValidationError::FusedWithoutEmbedding {
                parent_id: self.parent_id,
                ordinal: self.ordinal,
            });
        }
        self.fused = Some(fused);
        Ok(self)
    }

    pub fn parent_id(&self) -> &str {
        &self.parent_id
    }

    pub fn ordinal(&self) -> usize {
        self.ordinal
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn embedding(&self) -> Option<&EmbeddingVector> {
        self.embedding.as_ref()
    }

    pub fn fused(&self) -> Option<&EmbeddingVector> {
        self.fused.as_ref()
    }
}

/// A corpus passage together with everything derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct PassageRecord {
    passage_id: String,
    title: String,
    text: String,
    sentences: Vec<SentenceUnit>,
    synthetic_queries: Vec<SyntheticQuery>,
    embedding: Option<EmbeddingVector>,
    fused: Option<EmbeddingVector>,
}

impl PassageRecord {
    pub fn new(
        passage_id: impl Into<String>,
        title: impl Into<String>,
        text: impl Into<String>,
    ) -> Result<Self, ValidationError> {
        let passage_id = passage_id.into();
        if passage_id.is_empty() {
            return Err(ValidationError::EmptyId);
        }
        Ok(Self {
            passage_id,
            title: title.into(),
            text: text.into(),
            sentences: Vec::new(),
            synthetic_queries: Vec::new(),
            embedding: None,
            fused: None,
        })
    }

    /// Attaches segmented sentences. Ordinals must run `0..n` in order and
    /// every sentence must name this passage as its parent.
    pub fn with_sentences(mut self, sentences: Vec<SentenceUnit>) -> Result<Self, ValidationError> {
        for (position, s) in sentences.iter().enumerate() {
            if s.parent_id != self.passage_id {
                return Err(ValidationError::SentenceParent {
                    expected: self.passage_id,
                    found: s.parent_id.clone(),
                });
            }
            if s.ordinal != position {
                return Err(ValidationError::SentenceOrdinal {
                    parent_id: self.passage_id,
                    position,
                    found: s.ordinal,
                });
            }
        }
        self.sentences = sentences;
        Ok(self)
    }

    pub fn with_synthetic_queries(mut self, queries: Vec<SyntheticQuery>) -> Self {
        self.synthetic_queries = queries;
        self
    }

    pub fn with_embedding(mut self, embedding: EmbeddingVector) -> Self {
        self.embedding = Some(embedding);
        self
    }

    pub fn with_fused(mut self, fused: EmbeddingVector) -> Self {
        self.fused = Some(fused);
        self
    }

    pub fn passage_id(&self) -> &str {
        &self.passage_id
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Title and body joined by a single space, or the body alone when the
    /// title is empty. This is the text that gets segmented and embedded.
    pub fn full_text(&self) -> String {
        let title = self.title.trim();
        if title.is_empty() {
            self.text.clone()
        } else {
            format!("{title} {}", self.text)
        }
    }

    pub fn sentences(&self) -> &[SentenceUnit] {
        &self.sentences
    }

    pub fn synthetic_queries(&self) -> &[SyntheticQuery] {
        &self.synthetic_queries
    }

    pub fn embedding(&self) -> Option<&EmbeddingVector> {
        self.embedding.as_ref()
    }

    pub fn fused(&self) -> Option<&EmbeddingVector> {
        self.fused.as_ref()
    }
}

/// A test query from the evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
    pub embedding: Option<EmbeddingVector>,
}

impl QueryRecord {
    pub fn new(query_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            text: text.into(),
            embedding: None,
        }
    }

    pub fn with_embedding(mut self, embedding: EmbeddingVector) -> Self {
        self.embedding = Some(embedding);
        self
    }
}

/// Graded relevance judgments keyed by query then passage.
///
/// Grades are unsigned integers; anything at or above [`QrelSet::RELEVANT`]
/// counts as relevant for the binary metrics.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QrelSet {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl QrelSet {
    pub const RELEVANT: u32 = 1;

    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a judgment, returning the previous grade for the pair if any.
    pub fn insert(
        &mut self,
        query_id: impl Into<String>,
        passage_id: impl Into<String>,
        grade: u32,
    ) -> Option<u32> {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(passage_id.into(), grade)
    }

    pub fn grade(&self, query_id: &str, passage_id: &str) -> Option<u32> {
        self.judgments.get(query_id)?.get(passage_id).copied()
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.judgments.iter().flat_map(|(q, docs)| {
            docs.iter()
                .map(move |(d, &g)| (q.as_str(), d.as_str(), g))
        })
    }

    /// Every passage id mentioned by any judgment, whatever its grade.
    pub fn passage_ids(&self) -> HashSet<&str> {
        self.iter().map(|(_, d, _)| d).collect()
    }

    pub fn num_queries(&self) -> usize {
        self.judgments.len()
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub passage_id: String,
    pub score: f64,
}

/// Retrieval output for one query: distinct passages by descending score.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    query_id: String,
    hits: Vec<Hit>,
}

impl RankedList {
    pub fn new(query_id: impl Into<String>, hits: Vec<Hit>) -> Result<Self, ValidationError> {
        let query_id = query_id.into();
        let mut seen = HashSet::with_capacity(hits.len());
        for (rank, hit) in hits.iter().enumerate() {
            if !hit.score.is_finite() {
                return Err(ValidationError::NonFiniteScore { query_id, rank: rank + 1 });
            }
            if rank > 0 && hit.score > hits[rank - 1].score {
                return Err(ValidationError::ScoreOrder { query_id, rank: rank + 1 });
            }
            if !seen.insert(hit.passage_id.as_str()) {
                return Err(ValidationError::DuplicateHit {
                    query_id,
                    passage_id: hit.passage_id.clone(),
                });
            }
        }
        Ok(Self { query_id, hits })
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn hits(&self) -> &[Hit] {
        &self.hits
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

/// How a passage's own embedding and its synthetic query embeddings are
/// weighted when fused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    CorpusOnly,
    Equal,
    Manual,
    GenProb,
    Bertscore,
    BertscoreSoftmax,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 6] = [
        FusionStrategy::CorpusOnly,
        FusionStrategy::Equal,
        FusionStrategy::Manual,
        FusionStrategy::GenProb,
        FusionStrategy::Bertscore,
        FusionStrategy::BertscoreSoftmax,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionStrategy::CorpusOnly => "corpus_only",
            FusionStrategy::Equal => "equal",
            FusionStrategy::Manual => "manual",
            FusionStrategy::GenProb => "gen_prob",
            FusionStrategy::Bertscore => "bertscore",
            FusionStrategy::BertscoreSoftmax => "bertscore_softmax",
        }
    }

    /// Whether `w0` takes part in resolving the weights.
    pub fn uses_w0(self) -> bool {
        matches!(self, FusionStrategy::Manual | FusionStrategy::GenProb)
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionStrategy {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        FusionStrategy::ALL
            .into_iter()
            .find(|st| st.as_str() == norm)
            .ok_or_else(|| ValidationError::UnknownStrategy(s.to_string()))
    }
}

/// A weighting strategy plus its corpus weight `w0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFusionSpec")]
pub struct FusionSpec {
    strategy: FusionStrategy,
    w0: f64,
}

#[derive(Deserialize)]
struct RawFusionSpec {
    strategy: FusionStrategy,
    #[serde(default = "default_w0")]
    w0: f64,
}

fn default_w0() -> f64 {
    FusionSpec::DEFAULT_W0
}

impl TryFrom<RawFusionSpec> for FusionSpec {
    type Error = ValidationError;

    fn try_from(raw: RawFusionSpec) -> Result<Self, Self::Error> {
        FusionSpec::new(raw.strategy, raw.w0)
    }
}

impl FusionSpec {
    /// Corpus weight of the best manual configuration.
    pub const DEFAULT_W0: f64 = 0.6;

    pub fn new(strategy: FusionStrategy, w0: f64) -> Result<Self, ValidationError> {
        if !(0.0..=1.0).contains(&w0) {
            return Err(ValidationError::W0(w0));
        }
        Ok(Self { strategy, w0 })
    }

    pub fn corpus_only() -> Self {
        Self {
            strategy: FusionStrategy::CorpusOnly,
            w0: 1.0,
        }
    }

    pub fn manual(w0: f64) -> Result<Self, ValidationError> {
        Self::new(FusionStrategy::Manual, w0)
    }

    pub fn strategy(&self) -> FusionStrategy {
        self.strategy
    }

    pub fn w0(&self) -> f64 {
        self.w0
    }
}

impl fmt::Display for FusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.strategy.uses_w0() {
            write!(f, "{}(w0={})", self.strategy, self.w0)
        } else {
            write!(f, "{}", self.strategy)
        }
    }
}
