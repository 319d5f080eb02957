//! Dense retrieval over fused passage representations.
//!
//! A passage is represented by a convex combination of its own embedding and
//! the embeddings of synthetic queries generated from it. The crate covers
//! the whole offline pipeline: ingestion, sentence segmentation, query
//! filtering, weight resolution and fusion, exact cosine search and
//! evaluation, plus a Monte-Carlo simulation of the underlying estimator.

pub mod datamodel;
pub mod exec;
pub mod fusion;
pub mod ingest;
pub mod metrics;
pub mod provider;
pub mod rbsim;
pub mod retrieval;
pub mod textproc;

pub use datamodel::{
    EmbeddingVector, FusionSpec, FusionStrategy, Hit, PassageRecord, QrelSet, QueryKind,
    QueryRecord, RankedList, SentenceUnit, SyntheticQuery, ValidationError,
};
pub use exec::Exec;
pub use fusion::{fuse, fuse_corpus, fuse_passage, resolve_weights, FusionError, ResolvedWeights};
pub use metrics::{evaluate_run, Cutoffs, EvalReport, MetricError};
pub use retrieval::{build_index, RetrievalError, VectorIndex};
