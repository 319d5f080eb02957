//! Fused corpus representations.
//!
//! A passage (or sentence) vector is replaced by a convex combination of
//! itself and the embeddings of the synthetic queries generated from its
//! passage:
//!
//! ```text
//! R(C) = w_corpus * E(C) + sum_j w_j * E(Q_j),   w_corpus + sum_j w_j = 1
//! ```
//!
//! [`resolve_weights`] turns a [`FusionSpec`] into the concrete weights and
//! [`fuse`] applies them.

use thiserror::Error;

use crate::datamodel::{
    EmbeddingVector, FusionSpec, FusionStrategy, PassageRecord, SentenceUnit, SyntheticQuery,
    ValidationError,
};
use crate::exec::Exec;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("synthetic query {index} has no {field}")]
    MissingField { field: &'static str, index: usize },
    #[error("strategy {0} needs at least one synthetic query")]
    EmptyQueries(FusionStrategy),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("missing embedding for {0}")]
    MissingEmbedding(String),
    #[error("weights reference query {index} but only {len} were given")]
    WeightIndex { index: usize, len: usize },
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

/// Concrete per-source weights for one passage.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedWeights {
    pub w_corpus: f64,
    /// `(index into the query list, weight)`.
    pub per_query: Vec<(usize, f64)>,
}

impl ResolvedWeights {
    pub fn corpus_only() -> Self {
        Self {
            w_corpus: 1.0,
            per_query: Vec::new(),
        }
    }

    pub fn total(&self) -> f64 {
        self.w_corpus + self.per_query.iter().map(|(_, w)| w).sum::<f64>()
    }

    pub fn query_weights(&self) -> Vec<f64> {
        self.per_query.iter().map(|&(_, w)| w).collect()
    }
}

pub fn resolve_weights(
    spec: &FusionSpec,
    queries: &[SyntheticQuery],
) -> Result<ResolvedWeights, FusionError> {
    let strategy = spec.strategy();
    if strategy == FusionStrategy::CorpusOnly {
        return Ok(ResolvedWeights::corpus_only());
    }
    if queries.is_empty() {
        return Err(FusionError::EmptyQueries(strategy));
    }
    let n = queries.len();
    let w0 = spec.w0();
    let indexed = |weights: Vec<f64>| weights.into_iter().enumerate().collect::<Vec<_>>();

    let weights = match strategy {
        FusionStrategy::CorpusOnly => unreachable!(),
        FusionStrategy::Equal => {
            let w = 1.0 / (n as f64 + 1.0);
            ResolvedWeights {
                w_corpus: w,
                per_query: indexed(vec![w; n]),
            }
        }
        FusionStrategy::Manual => ResolvedWeights {
            w_corpus: w0,
            per_query: indexed(vec![(1.0 - w0) / n as f64; n]),
        },
        FusionStrategy::GenProb => {
            let total: f64 = queries.iter().map(SyntheticQuery::gen_prob).sum();
            ResolvedWeights {
                w_corpus: w0,
                per_query: indexed(
                    queries
                        .iter()
                        .map(|q| (1.0 - w0) * q.gen_prob() / total)
                        .collect(),
                ),
            }
        }
        FusionStrategy::Bertscore => {
            let scores = bertscores(queries)?;
            let denominator = 1.0 + scores.iter().sum::<f64>();
            ResolvedWeights {
                w_corpus: 1.0 / denominator,
                per_query: indexed(scores.iter().map(|s| s / denominator).collect()),
            }
        }
        FusionStrategy::BertscoreSoftmax => {
            let scores = bertscores(queries)?;
            // the corpus occupies a slot with pseudo-score 1
            let max = scores.iter().copied().fold(1.0_f64, f64::max);
            let corpus = (1.0 - max).exp();
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total = corpus + exps.iter().sum::<f64>();
            ResolvedWeights {
                w_corpus: corpus / total,
                per_query: indexed(exps.into_iter().map(|e| e / total).collect()),
            }
        }
    };
    Ok(weights)
}

fn bertscores(queries: &[SyntheticQuery]) -> Result<Vec<f64>, FusionError> {
    queries
        .iter()
        .enumerate()
        .map(|(index, q)| {
            q.bertscore_f1().ok_or(FusionError::MissingField {
                field: "bertscore_f1",
                index,
            })
        })
        .collect()
}

/// Weighted sum of the corpus vector and the query embeddings named by
/// `weights`, accumulated in `f64`.
pub fn fuse(
    corpus_embedding: &EmbeddingVector,
    queries: &[SyntheticQuery],
    weights: &ResolvedWeights,
) -> Result<EmbeddingVector, FusionError> {
    let dim = corpus_embedding.dim();
    let mut acc: Vec<f64> = corpus_embedding
        .values()
        .iter()
        .map(|&v| weights.w_corpus * f64::from(v))
        .collect();
    for &(index, w) in &weights.per_query {
        let query = queries.get(index).ok_or(FusionError::WeightIndex {
            index,
            len: queries.len(),
        })?;
        let emb = query
            .embedding()
            .ok_or_else(|| FusionError::MissingEmbedding(format!("synthetic query {index}")))?;
        if emb.dim() != dim {
            return Err(FusionError::DimensionMismatch {
                expected: dim,
                found: emb.dim(),
            });
        }
        for (a, &v) in acc.iter_mut().zip(emb.values()) {
            *a += w * f64::from(v);
        }
    }
    Ok(EmbeddingVector::new(
        acc.into_iter().map(|v| v as f32).collect(),
    )?)
}

/// Fuses one passage. Only queries that passed the quality filter take
/// part; if none did, the passage keeps its raw embedding(s). Weights are
/// reported with indices into the passage's full synthetic query list.
pub fn fuse_passage_with_weights(
    passage: PassageRecord,
    spec: &FusionSpec,
    sentence_level: bool,
) -> Result<(PassageRecord, ResolvedWeights), FusionError> {
    let (kept_idx, kept): (Vec<usize>, Vec<SyntheticQuery>) = passage
        .synthetic_queries()
        .iter()
        .enumerate()
        .filter(|(_, q)| q.passed_filter())
        .map(|(i, q)| (i, q.clone()))
        .unzip();

    let weights = if kept.is_empty() {
        ResolvedWeights::corpus_only()
    } else {
        resolve_weights(spec, &kept)?
    };

    let fused_passage = if sentence_level {
        let sentences = passage
            .sentences()
            .iter()
            .map(|s| fuse_sentence(s, &kept, &weights))
            .collect::<Result<Vec<_>, _>>()?;
        if sentences.is_empty() {
            return Err(FusionError::MissingEmbedding(format!(
                "sentences of passage {}",
                passage.passage_id()
            )));
        }
        passage.with_sentences(sentences)?
    } else {
        let emb = passage.embedding().ok_or_else(|| {
            FusionError::MissingEmbedding(format!("passage {}", passage.passage_id()))
        })?;
        let fused = fuse(emb, &kept, &weights)?;
        passage.with_fused(fused)
    };

    let reported = ResolvedWeights {
        w_corpus: weights.w_corpus,
        per_query: weights
            .per_query
            .iter()
            .map(|&(i, w)| (kept_idx[i], w))
            .collect(),
    };
    Ok((fused_passage, reported))
}

pub fn fuse_passage(
    passage: PassageRecord,
    spec: &FusionSpec,
    sentence_level: bool,
) -> Result<PassageRecord, FusionError> {
    fuse_passage_with_weights(passage, spec, sentence_level).map(|(p, _)| p)
}

fn fuse_sentence(
    sentence: &SentenceUnit,
    queries: &[SyntheticQuery],
    weights: &ResolvedWeights,
) -> Result<SentenceUnit, FusionError> {
    let emb = sentence.embedding().ok_or_else(|| {
        FusionError::MissingEmbedding(format!(
            "sentence {}#{}",
            sentence.parent_id(),
            sentence.ordinal()
        ))
    })?;
    let fused = fuse(emb, queries, weights)?;
    Ok(sentence.clone().with_fused(fused)?)
}

/// Fuses every passage of a corpus, in order.
pub fn fuse_corpus(
    passages: &[PassageRecord],
    spec: &FusionSpec,
    sentence_level: bool,
    exec: Exec,
) -> Result<Vec<(PassageRecord, ResolvedWeights)>, FusionError> {
    exec.map(passages, |p| {
        fuse_passage_with_weights(p.clone(), spec, sentence_level)
    })
    .into_iter()
    .collect()
}
