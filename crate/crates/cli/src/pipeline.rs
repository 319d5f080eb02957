//! Pipeline stages. Each stage checks that its upstream artifacts exist in
//! the work directory, writes its own artifacts there, and records a
//! manifest under `manifests/<stage>.json`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Duration;

use qfuse_core::ingest::{self, EmbeddingRecord, SegmentLine, SyntheticSet};
use qfuse_core::metrics::{self, EvalReport, MetricError};
use qfuse_core::provider::{
    Embedder, FixtureGenerator, GenerationRequest, Generator, HashEmbedder, HttpProvider,
    InstructionSet, ProviderError,
};
use qfuse_core::rbsim::{self, GroupModel};
use qfuse_core::textproc::{self, FilterConfig, SegmenterConfig};
use qfuse_core::{
    build_index, fuse_corpus, EmbeddingVector, Exec, FusionError, FusionSpec, FusionStrategy,
    PassageRecord, QrelSet, QueryKind, QueryRecord, RankedList, SentenceUnit, SyntheticQuery,
    VectorIndex,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ProviderKind, Settings};
use crate::error::CliError;
use crate::manifest::Manifest;

pub mod artifact {
    pub const CORPUS_FULL: &str = "corpus.full.jsonl";
    pub const CORPUS: &str = "corpus.jsonl";
    pub const QUERIES: &str = "queries.jsonl";
    pub const QRELS: &str = "qrels.tsv";
    pub const SEGMENTS: &str = "segments.jsonl";
    pub const SYNTHETIC_RAW: &str = "synthetic.raw.jsonl";
    pub const SYNTHETIC: &str = "synthetic.jsonl";
    pub const PASSAGES_EMB: &str = "passages.emb";
    pub const SENTENCES_EMB: &str = "sentences.emb";
    pub const SYNTHETIC_EMB: &str = "synthetic.emb";
    pub const QUERIES_EMB: &str = "queries.emb";
    pub const FUSED_EMB: &str = "fused.emb";
    pub const WEIGHTS: &str = "weights.jsonl";
    pub const INDEX: &str = "index.bin";
    pub const RUN: &str = "run.trec";
    pub const REPORT: &str = "report.jsonl";
    pub const ABLATION: &str = "ablation.tsv";
    pub const ABLATE_DIR: &str = "ablate";
    pub const RB_CSV: &str = "rbsim.csv";
    pub const RB_SUMMARY: &str = "rbsim.summary.json";
}

pub const RUN_TAG: &str = "qfuse";

/// Strategies compared by `ablate`, in table order.
pub const ABLATION_GRID: [FusionStrategy; 5] = [
    FusionStrategy::CorpusOnly,
    FusionStrategy::Equal,
    FusionStrategy::Manual,
    FusionStrategy::Bertscore,
    FusionStrategy::BertscoreSoftmax,
];

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Path of an upstream artifact that must already exist.
    pub fn require(&self, name: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        if path.is_file() {
            Ok(path)
        } else {
            Err(CliError::MissingArtifact {
                artifact: name.to_string(),
                path,
            })
        }
    }

    pub fn manifest_path(&self, stage: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{stage}.json"))
    }

    fn ensure(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))
    }
}

/// What a stage prints and what its manifest records.
#[derive(Debug, Clone)]
pub struct StageReport {
    pub summary: String,
    pub details: Value,
}

struct Files(Vec<(String, PathBuf)>);

impl Files {
    fn new() -> Self {
        Self(Vec::new())
    }

    fn add(&mut self, name: impl Into<String>, path: PathBuf) -> PathBuf {
        self.0.push((name.into(), path.clone()));
        path
    }

    fn refs(&self) -> Vec<(String, &Path)> {
        self.0.iter().map(|(n, p)| (n.clone(), p.as_path())).collect()
    }
}

fn finish(
    ws: &Workspace,
    settings: &Settings,
    stage: &str,
    inputs: Files,
    outputs: Files,
    summary: String,
    details: Value,
) -> Result<StageReport, CliError> {
    Manifest::build(stage, settings, &inputs.refs(), &outputs.refs(), details.clone())?
        .write(&ws.manifest_path(stage))?;
    Ok(StageReport { summary, details })
}

pub fn sentence_key(passage_id: &str, ordinal: usize) -> String {
    format!("{passage_id}\t{ordinal}")
}

pub fn synthetic_key(passage_id: &str, kind: QueryKind, index: usize) -> String {
    format!("{passage_id}\t{kind}\t{index}")
}

/// Synthetic queries grouped per passage, keeping file order.
fn group_synthetic(set: SyntheticSet) -> BTreeMap<String, Vec<SyntheticQuery>> {
    let mut out: BTreeMap<String, Vec<SyntheticQuery>> = BTreeMap::new();
    for (pid, q) in set {
        out.entry(pid).or_default().push(q);
    }
    out
}

fn embedding_map(records: Vec<EmbeddingRecord>) -> HashMap<String, EmbeddingVector> {
    records.into_iter().map(|r| (r.id, r.vector)).collect()
}

fn http_provider(settings: &Settings) -> Result<HttpProvider, CliError> {
    Ok(HttpProvider::new(&settings.endpoint)?
        .with_batching(settings.http.batch_size, settings.http.max_in_flight)
        .with_retries(
            settings.http.retries,
            Duration::from_millis(settings.http.backoff_ms),
        )
        .with_decoding(&settings.generation.decoding))
}

pub fn embedder(settings: &Settings) -> Result<Box<dyn Embedder>, CliError> {
    Ok(match settings.provider {
        ProviderKind::Hash => Box::new(
            HashEmbedder::new(settings.hash.dim, settings.seed)?.with_mode(settings.hash.mode),
        ),
        ProviderKind::Http => Box::new(http_provider(settings)?),
    })
}

pub fn generator(settings: &Settings) -> Result<Box<dyn Generator>, CliError> {
    Ok(match settings.provider {
        ProviderKind::Hash => {
            let fixture = settings.generation.fixture.as_ref().ok_or_else(|| {
                CliError::Usage("the hash provider generates from a fixture: pass --fixture".into())
            })?;
            if !fixture.is_file() {
                return Err(CliError::MissingArtifact {
                    artifact: "generation fixture".into(),
                    path: fixture.clone(),
                });
            }
            Box::new(FixtureGenerator::load(fixture)?)
        }
        ProviderKind::Http => Box::new(http_provider(settings)?),
    })
}

/// Embeds `texts`; malformed texts are input errors, not usage errors.
fn embed_all(embedder: &dyn Embedder, texts: &[&str], what: &str) -> Result<Vec<EmbeddingVector>, CliError> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    embedder.embed_batch(texts).map_err(|e| match e {
        ProviderError::InvalidRequest(m) => CliError::Input(format!("{what}: {m}")),
        other => other.into(),
    })
}

pub fn ingest(
    ws: &Workspace,
    settings: &Settings,
    corpus: &Path,
    queries: &Path,
    qrels: &Path,
) -> Result<StageReport, CliError> {
    ws.ensure(ws.root())?;
    let mut inputs = Files::new();
    for (name, p) in [("corpus", corpus), ("queries", queries), ("qrels", qrels)] {
        if !p.is_file() {
            return Err(CliError::MissingArtifact {
                artifact: name.into(),
                path: p.to_path_buf(),
            });
        }
        inputs.add(name, p.to_path_buf());
    }
    let passages = ingest::load_corpus(corpus)?;
    let query_records = ingest::load_queries(queries)?;
    let judgments = ingest::load_qrels(qrels)?;
    let warnings = ingest::check_qrels(&judgments, &passages, Some(&query_records));

    let mut outputs = Files::new();
    ingest::save_corpus(&passages, outputs.add(artifact::CORPUS_FULL, ws.path(artifact::CORPUS_FULL)))?;
    ingest::save_corpus(&passages, outputs.add(artifact::CORPUS, ws.path(artifact::CORPUS)))?;
    ingest::save_queries(&query_records, outputs.add(artifact::QUERIES, ws.path(artifact::QUERIES)))?;
    ingest::save_qrels(&judgments, outputs.add(artifact::QRELS, ws.path(artifact::QRELS)))?;

    let warning_list: Vec<String> = warnings.iter().map(|w| format!("{w:?}")).collect();
    let summary = format!(
        "ingest: {} passages, {} queries, {} judgments, {} warnings",
        passages.len(),
        query_records.len(),
        judgments.len(),
        warnings.len()
    );
    let details = json!({
        "passages": passages.len(),
        "queries": query_records.len(),
        "judgments": judgments.len(),
        "warnings": warning_list,
    });
    finish(ws, settings, "ingest", inputs, outputs, summary, details)
}

pub fn downsample(ws: &Workspace, settings: &Settings, target: usize) -> Result<StageReport, CliError> {
    let mut inputs = Files::new();
    let full = inputs.add(artifact::CORPUS_FULL, ws.require(artifact::CORPUS_FULL)?);
    let qrels_path = inputs.add(artifact::QRELS, ws.require(artifact::QRELS)?);
    let passages = ingest::load_corpus(&full)?;
    let qrels = ingest::load_qrels(&qrels_path)?;
    let kept = ingest::downsample_corpus(&passages, &qrels, target, settings.seed)?;
    let mut outputs = Files::new();
    ingest::save_corpus(&kept, outputs.add(artifact::CORPUS, ws.path(artifact::CORPUS)))?;
    let summary = format!("downsample: {} -> {} passages", passages.len(), kept.len());
    let details = json!({"target": target, "from": passages.len(), "kept": kept.len()});
    finish(ws, settings, "downsample", inputs, outputs, summary, details)
}

fn segmenter(settings: &Settings) -> Result<SegmenterConfig, CliError> {
    let base = match &settings.segmenter.abbreviations {
        Some(p) => SegmenterConfig::from_abbreviation_file(p)?,
        None => SegmenterConfig::default(),
    };
    Ok(base
        .with_min_sentence_chars(settings.segmenter.min_sentence_chars)?
        .with_initials(settings.segmenter.initials))
}

pub fn segment(ws: &Workspace, settings: &Settings) -> Result<StageReport, CliError> {
    let mut inputs = Files::new();
    let corpus = ingest::load_corpus(inputs.add(artifact::CORPUS, ws.require(artifact::CORPUS)?))?;
    if let Some(p) = &settings.segmenter.abbreviations {
        inputs.add("abbreviations", p.clone());
    }
    let cfg = segmenter(settings)?;
    let per_passage = Exec::default().map(&corpus, |p| {
        textproc::segment_sentences(&p.full_text(), &cfg)
            .map_err(|e| CliError::Input(format!("passage {}: {e}", p.passage_id())))
    });
    let mut lines = Vec::new();
    for (p, sentences) in corpus.iter().zip(per_passage) {
        for (ordinal, text) in sentences?.into_iter().enumerate() {
            lines.push(SegmentLine {
                passage_id: p.passage_id().to_string(),
                ordinal,
                text,
            });
        }
    }
    let mut outputs = Files::new();
    ingest::save_segments(&lines, outputs.add(artifact::SEGMENTS, ws.path(artifact::SEGMENTS)))?;
    let summary = format!("segment: {} passages -> {} sentences", corpus.len(), lines.len());
    let details = json!({"passages": corpus.len(), "sentences": lines.len()});
    finish(ws, settings, "segment", inputs, outputs, summary, details)
}

pub fn generate(ws: &Workspace, settings: &Settings) -> Result<StageReport, CliError> {
    let mut inputs = Files::new();
    let corpus = ingest::load_corpus(inputs.add(artifact::CORPUS, ws.require(artifact::CORPUS)?))?;
    let generator = generator(settings)?;
    if let (ProviderKind::Hash, Some(f)) = (settings.provider, &settings.generation.fixture) {
        inputs.add("fixture", f.clone());
    }
    let gen = &settings.generation;
    let configured = InstructionSet::default();
    let per_passage = Exec::default().map(&corpus, |p| -> Result<(Vec<SyntheticQuery>, usize), CliError> {
        let mut out = Vec::new();
        let mut rejected = 0;
        for template in gen.instructions.templates() {
            let request = GenerationRequest::new(
                &configured,
                template,
                p.passage_id(),
                p.full_text(),
                gen.num_sequences,
                gen.max_new_tokens,
                gen.allow_instruction_override,
            )?;
            for r in generator.generate(&request)? {
                let q = SyntheticQuery::new(template.kind, r.text, r.gen_prob).and_then(|q| match r.bertscore_f1 {
                    Some(s) => q.with_bertscore(s),
                    None => Ok(q),
                });
                match q {
                    Ok(q) => out.push(q),
                    Err(_) => rejected += 1,
                }
            }
        }
        Ok((out, rejected))
    });
    let mut set: SyntheticSet = Vec::new();
    let mut rejected = 0;
    for (p, r) in corpus.iter().zip(per_passage) {
        let (qs, bad) = r?;
        rejected += bad;
        set.extend(qs.into_iter().map(|q| (p.passage_id().to_string(), q)));
    }
    let mut outputs = Files::new();
    ingest::save_synthetic(&set, outputs.add(artifact::SYNTHETIC_RAW, ws.path(artifact::SYNTHETIC_RAW)))?;
    let summary = format!(
        "generate: {} synthetic queries for {} passages ({} rejected)",
        set.len(),
        corpus.len(),
        rejected
    );
    let details = json!({"passages": corpus.len(), "generated": set.len(), "rejected": rejected});
    finish(ws, settings, "generate", inputs, outputs, summary, details)
}

pub fn filter(ws: &Workspace, settings: &Settings) -> Result<StageReport, CliError> {
    let mut inputs = Files::new();
    let raw = ingest::load_synthetic(inputs.add(artifact::SYNTHETIC_RAW, ws.require(artifact::SYNTHETIC_RAW)?))?;
    let segments = ingest::load_segments(inputs.add(artifact::SEGMENTS, ws.require(artifact::SEGMENTS)?))?;
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in &segments {
        *counts.entry(s.passage_id.as_str()).or_default() += 1;
    }
    let cfg = FilterConfig {
        keyword_bound: settings.keyword_bound,
    };
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let filtered: SyntheticSet = raw
        .into_iter()
        .map(|(pid, q)| {
            let n = counts.get(pid.as_str()).copied().unwrap_or(0);
            let q = textproc::apply_filter(q, n, &cfg);
            let t = tally.entry(q.kind().to_string()).or_default();
            t.1 += 1;
            if q.passed_filter() {
                t.0 += 1;
            }
            (pid, q)
        })
        .collect();
    let mut outputs = Files::new();
    ingest::save_synthetic(&filtered, outputs.add(artifact::SYNTHETIC, ws.path(artifact::SYNTHETIC)))?;
    let passed: usize = tally.values().map(|t| t.0).sum();
    let summary = format!("filter: {passed} of {} synthetic queries passed", filtered.len());
    let details: BTreeMap<String, Value> = tally
        .into_iter()
        .map(|(k, (p, t))| (k, json!({"passed": p, "total": t})))
        .collect();
    finish(ws, settings, "filter", inputs, outputs, summary, json!(details))
}

pub fn embed(ws: &Workspace, settings: &Settings) -> Result<StageReport, CliError> {
    let mut inputs = Files::new();
    let corpus = ingest::load_corpus(inputs.add(artifact::CORPUS, ws.require(artifact::CORPUS)?))?;
    let queries = ingest::load_queries(inputs.add(artifact::QUERIES, ws.require(artifact::QUERIES)?))?;
    let synthetic = ingest::load_synthetic(inputs.add(artifact::SYNTHETIC, ws.require(artifact::SYNTHETIC)?))?;
    let segments = if settings.sentence_level {
        Some(ingest::load_segments(inputs.add(artifact::SEGMENTS, ws.require(artifact::SEGMENTS)?))?)
    } else {
        None
    };
    let embedder = embedder(settings)?;
    let mut outputs = Files::new();
    let mut counts = BTreeMap::new();

    let mut write = |name: &str, ids: Vec<String>, texts: Vec<String>| -> Result<(), CliError> {
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let vectors = embed_all(embedder.as_ref(), &refs, name)?;
        let records: Vec<EmbeddingRecord> = ids
            .into_iter()
            .zip(vectors)
            .map(|(id, v)| EmbeddingRecord::new(id, v))
            .collect();
        counts.insert(name.to_string(), records.len());
        ingest::save_embeddings(&records, outputs.add(name, ws.path(name)))?;
        Ok(())
    };

    write(
        artifact::PASSAGES_EMB,
        corpus.iter().map(|p| p.passage_id().to_string()).collect(),
        corpus.iter().map(PassageRecord::full_text).collect(),
    )?;
    if let Some(segments) = &segments {
        write(
            artifact::SENTENCES_EMB,
            segments.iter().map(|s| sentence_key(&s.passage_id, s.ordinal)).collect(),
            segments.iter().map(|s| s.text.clone()).collect(),
        )?;
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut ids = Vec::new();
    let mut texts = Vec::new();
    for (pid, q) in &synthetic {
        let i = seen.entry(pid.as_str()).or_default();
        if q.passed_filter() {
            ids.push(synthetic_key(pid, q.kind(), *i));
            texts.push(q.text().to_string());
        }
        *i += 1;
    }
    write(artifact::SYNTHETIC_EMB, ids, texts)?;
    write(
        artifact::QUERIES_EMB,
        queries.iter().map(|q| q.query_id.clone()).collect(),
        queries.iter().map(|q| q.text.clone()).collect(),
    )?;

    let summary = format!(
        "embed: {}",
        counts
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    finish(ws, settings, "embed", inputs, outputs, summary, json!(counts))
}

/// Loads everything fusion needs and attaches embeddings to passages,
/// sentences and filter-passed synthetic queries.
type FusionInputs = (Vec<PassageRecord>, Vec<(String, PathBuf)>);

pub fn load_fusion_inputs(ws: &Workspace, settings: &Settings) -> Result<FusionInputs, CliError> {
    let mut inputs = Files::new();
    let corpus = ingest::load_corpus(inputs.add(artifact::CORPUS, ws.require(artifact::CORPUS)?))?;
    let mut synthetic = group_synthetic(ingest::load_synthetic(
        inputs.add(artifact::SYNTHETIC, ws.require(artifact::SYNTHETIC)?),
    )?);
    let syn_emb = embedding_map(ingest::load_embeddings(
        inputs.add(artifact::SYNTHETIC_EMB, ws.require(artifact::SYNTHETIC_EMB)?),
    )?);
    let (segments, unit_emb) = if settings.sentence_level {
        let seg = ingest::load_segments(inputs.add(artifact::SEGMENTS, ws.require(artifact::SEGMENTS)?))?;
        let emb = ingest::load_embeddings(inputs.add(artifact::SENTENCES_EMB, ws.require(artifact::SENTENCES_EMB)?))?;
        let mut by_passage: HashMap<String, Vec<SegmentLine>> = HashMap::new();
        for s in seg {
            by_passage.entry(s.passage_id.clone()).or_default().push(s);
        }
        (by_passage, embedding_map(emb))
    } else {
        let emb = ingest::load_embeddings(inputs.add(artifact::PASSAGES_EMB, ws.require(artifact::PASSAGES_EMB)?))?;
        (HashMap::new(), embedding_map(emb))
    };
    let missing = |what: String| CliError::Input(format!("no embedding for {what}; rerun embed"));

    let mut out = Vec::with_capacity(corpus.len());
    for p in corpus {
        let pid = p.passage_id().to_string();
        let queries = synthetic
            .remove(&pid)
            .unwrap_or_default()
            .into_iter()
            .enumerate()
            .map(|(i, q)| {
                if !q.passed_filter() {
                    return Ok(q);
                }
                let key = synthetic_key(&pid, q.kind(), i);
                let e = syn_emb.get(&key).ok_or_else(|| missing(format!("synthetic query {key:?}")))?;
                Ok(q.with_embedding(e.clone()))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let p = p.with_synthetic_queries(queries);
        let p = if settings.sentence_level {
            let mut lines = segments.get(&pid).cloned().unwrap_or_default();
            lines.sort_by_key(|s| s.ordinal);
            let sentences = lines
                .into_iter()
                .map(|s| {
                    let key = sentence_key(&pid, s.ordinal);
                    let e = unit_emb.get(&key).ok_or_else(|| missing(format!("sentence {key:?}")))?;
                    Ok(SentenceUnit::new(&pid, s.ordinal, s.text).with_embedding(e.clone()))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            p.with_sentences(sentences)?
        } else {
            let e = unit_emb.get(&pid).ok_or_else(|| missing(format!("passage {pid:?}")))?;
            p.with_embedding(e.clone())
        };
        out.push(p);
    }
    if let Some(pid) = synthetic.keys().next() {
        return Err(CliError::Input(format!(
            "synthetic queries reference passage {pid:?}, which is not in {}",
            artifact::CORPUS
        )));
    }
    Ok((out, inputs.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryWeight {
    pub index: usize,
    pub kind: QueryKind,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightLine {
    pub passage_id: String,
    pub w_corpus: f64,
    pub queries: Vec<QueryWeight>,
}

/// Fuses every passage and returns the index rows plus resolved weights.
pub fn fuse_records(
    passages: &[PassageRecord],
    spec: &FusionSpec,
    sentence_level: bool,
) -> Result<(Vec<EmbeddingRecord>, Vec<WeightLine>), FusionError> {
    let fused = fuse_corpus(passages, spec, sentence_level, Exec::default())?;
    let mut records = Vec::new();
    let mut weights = Vec::with_capacity(fused.len());
    for (p, w) in fused {
        if sentence_level {
            for s in p.sentences() {
                let v = s.fused().expect("fused by fuse_corpus").clone();
                records.push(EmbeddingRecord::new(sentence_key(p.passage_id(), s.ordinal()), v));
            }
        } else {
            let v = p.fused().expect("fused by fuse_corpus").clone();
            records.push(EmbeddingRecord::new(p.passage_id(), v));
        }
        weights.push(WeightLine {
            passage_id: p.passage_id().to_string(),
            w_corpus: w.w_corpus,
            queries: w
                .per_query
                .iter()
                .map(|&(index, weight)| QueryWeight {
                    index,
                    kind: p.synthetic_queries()[index].kind(),
                    weight,
                })
                .collect(),
        });
    }
    Ok((records, weights))
}

/// Distinct weight vectors with the number of passages using each.
type WeightProfile = (f64, Vec<(QueryKind, f64)>, usize);

fn weight_profiles(weights: &[WeightLine]) -> Value {
    const SHOWN: usize = 20;
    let mut profiles: Vec<WeightProfile> = Vec::new();
    for w in weights {
        let q: Vec<(QueryKind, f64)> = w.queries.iter().map(|q| (q.kind, q.weight)).collect();
        match profiles.iter_mut().find(|p| p.0 == w.w_corpus && p.1 == q) {
            Some(p) => p.2 += 1,
            None => profiles.push((w.w_corpus, q, 1)),
        }
    }
    json!({
        "distinct": profiles.len(),
        "profiles": profiles.iter().take(SHOWN).map(|(c, q, n)| json!({
            "w_corpus": c,
            "queries": q.iter().map(|(k, w)| json!({"kind": k, "weight": w})).collect::<Vec<_>>(),
            "passages": n,
        })).collect::<Vec<_>>(),
    })
}

pub fn fuse(ws: &Workspace, settings: &Settings) -> Result<StageReport, CliError> {
    let spec = settings.fusion_spec()?;
    let (passages, inputs) = load_fusion_inputs(ws, settings)?;
    let (records, weights) = fuse_records(&passages, &spec, settings.sentence_level)?;
    let mut outputs = Files::new();
    ingest::save_embeddings(&records, outputs.add(artifact::FUSED_EMB, ws.path(artifact::FUSED_EMB)))?;
    let wpath = outputs.add(artifact::WEIGHTS, ws.path(artifact::WEIGHTS));
    let mut lines = String::new();
    for w in &weights {
        lines.push_str(&serde_json::to_string(w).expect("weights serialize"));
        lines.push('\n');
    }
    std::fs::write(&wpath, lines).map_err(CliError::io(&wpath))?;
    let summary = format!("fuse: {spec}, {} rows from {} passages", records.len(), passages.len());
    let details = json!({
        "strategy": spec.strategy(),
        "w0": spec.w0(),
        "sentence_level": settings.sentence_level,
        "rows": records.len(),
        "weights": weight_profiles(&weights),
    });
    finish(ws, settings, "fuse", Files(inputs), outputs, summary, details)
}

/// Rebuilds index input from fused rows keyed by passage id or by
/// `passage id \t ordinal`.
pub fn index_from_fused(records: &[EmbeddingRecord], sentence_level: bool) -> Result<VectorIndex, CliError> {
    let mismatch = |id: &str| {
        CliError::Input(format!(
            "fused row {id:?} does not match sentence_level={sentence_level}; rerun fuse"
        ))
    };
    let passages: Vec<PassageRecord> = if sentence_level {
        let mut grouped: BTreeMap<&str, Vec<(usize, &EmbeddingVector)>> = BTreeMap::new();
        for r in records {
            let (pid, ord) = r.id.rsplit_once('\t').ok_or_else(|| mismatch(&r.id))?;
            let ord: usize = ord.parse().map_err(|_| mismatch(&r.id))?;
            grouped.entry(pid).or_default().push((ord, &r.vector));
        }
        grouped
            .into_iter()
            .map(|(pid, mut rows)| {
                rows.sort_by_key(|r| r.0);
                let sentences = rows
                    .into_iter()
                    .map(|(ord, v)| {
                        SentenceUnit::new(pid, ord, "")
                            .with_embedding(v.clone())
                            .with_fused(v.clone())
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(PassageRecord::new(pid, "", "")?.with_sentences(sentences)?)
            })
            .collect::<Result<_, CliError>>()?
    } else {
        records
            .iter()
            .map(|r| {
                if r.id.contains('\t') {
                    return Err(mismatch(&r.id));
                }
                Ok(PassageRecord::new(&r.id, "", "")?.with_fused(r.vector.clone()))
            })
            .collect::<Result<_, CliError>>()?
    };
    Ok(build_index(&passages, sentence_level)?)
}

pub fn index(ws: &Workspace, settings: &Settings) -> Result<StageReport, CliError> {
    let mut inputs = Files::new();
    let fused = ingest::load_embeddings(inputs.add(artifact::FUSED_EMB, ws.require(artifact::FUSED_EMB)?))?;
    let index = index_from_fused(&fused, settings.sentence_level)?;
    let mut outputs = Files::new();
    index.save(outputs.add(artifact::INDEX, ws.path(artifact::INDEX)))?;
    let summary = format!(
        "index: {} rows over {} passages, dim {}",
        index.num_rows(),
        index.num_passages(),
        index.dim()
    );
    let details = json!({"rows": index.num_rows(), "passages": index.num_passages(), "dim": index.dim()});
    finish(ws, settings, "index", inputs, outputs, summary, details)
}

/// Queries in file order with their embeddings attached.
pub fn embedded_queries(queries: Vec<QueryRecord>, emb: Vec<EmbeddingRecord>) -> Result<Vec<QueryRecord>, CliError> {
    let map = embedding_map(emb);
    queries
        .into_iter()
        .map(|q| {
            let e = map.get(&q.query_id).ok_or_else(|| {
                CliError::Input(format!("no embedding for query {:?}; rerun embed", q.query_id))
            })?;
            Ok(q.with_embedding(e.clone()))
        })
        .collect()
}

pub fn run_queries(index: &VectorIndex, queries: &[QueryRecord], k: usize) -> Result<Vec<RankedList>, CliError> {
    Ok(index.batch_search(queries, k)?)
}

fn write_run(runs: &[RankedList], path: &Path) -> Result<(), CliError> {
    let mut buf = Vec::new();
    metrics::write_trec_run(runs, RUN_TAG, &mut buf).map_err(CliError::io(path))?;
    std::fs::write(path, buf).map_err(CliError::io(path))
}

fn load_queries_with_embeddings(ws: &Workspace, inputs: &mut Files) -> Result<Vec<QueryRecord>, CliError> {
    let queries = ingest::load_queries(inputs.add(artifact::QUERIES, ws.require(artifact::QUERIES)?))?;
    let emb = ingest::load_embeddings(inputs.add(artifact::QUERIES_EMB, ws.require(artifact::QUERIES_EMB)?))?;
    embedded_queries(queries, emb)
}

pub fn search(ws: &Workspace, settings: &Settings) -> Result<StageReport, CliError> {
    let mut inputs = Files::new();
    let index = VectorIndex::load(inputs.add(artifact::INDEX, ws.require(artifact::INDEX)?))?;
    let queries = load_queries_with_embeddings(ws, &mut inputs)?;
    let runs = run_queries(&index, &queries, settings.k)?;
    let mut outputs = Files::new();
    write_run(&runs, &outputs.add(artifact::RUN, ws.path(artifact::RUN)))?;
    let summary = format!("search: {} queries, top {}", runs.len(), settings.k);
    let details = json!({"queries": runs.len(), "k": settings.k});
    finish(ws, settings, "search", inputs, outputs, summary, details)
}

fn report_json(r: &EvalReport) -> Value {
    json!({
        "ndcg": r.ndcg,
        "mrr": r.mrr,
        "recall": r.recall,
        "cutoffs": r.cutoffs,
        "evaluated": r.evaluated(),
        "skipped": r.skipped,
    })
}

pub fn eval(ws: &Workspace, settings: &Settings) -> Result<StageReport, CliError> {
    let mut inputs = Files::new();
    let run_path = inputs.add(artifact::RUN, ws.require(artifact::RUN)?);
    let f = std::fs::File::open(&run_path).map_err(CliError::io(&run_path))?;
    let runs = metrics::read_trec_run(std::io::BufReader::new(f))?;
    let qrels = ingest::load_qrels(inputs.add(artifact::QRELS, ws.require(artifact::QRELS)?))?;
    let report = metrics::evaluate_run(&runs, &qrels, settings.eval)?;
    let mut outputs = Files::new();
    let path = outputs.add(artifact::REPORT, ws.path(artifact::REPORT));
    let mut buf = Vec::new();
    report.write_jsonl(&mut buf).map_err(CliError::io(&path))?;
    std::fs::write(&path, buf).map_err(CliError::io(&path))?;
    let summary = format!("{report}");
    finish(ws, settings, "eval", inputs, outputs, summary, report_json(&report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub strategy: FusionStrategy,
    pub w0: Option<f64>,
    pub ndcg: Option<f64>,
    pub mrr: Option<f64>,
    pub recall: Option<f64>,
    pub evaluated: usize,
    pub note: String,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

pub fn render_ablation(rows: &[AblationRow], cutoffs: metrics::Cutoffs) -> String {
    let mut s = format!(
        "{:<18} {:>5} {:>9} {:>9} {:>10}\n",
        "strategy",
        "w0",
        format!("ndcg@{}", cutoffs.ndcg),
        format!("mrr@{}", cutoffs.mrr),
        format!("recall@{}", cutoffs.recall)
    );
    for r in rows {
        s.push_str(&format!(
            "{:<18} {:>5} {:>9} {:>9} {:>10}",
            r.strategy.as_str(),
            r.w0.map_or_else(|| "n/a".into(), |w| format!("{w}")),
            fmt_opt(r.ndcg),
            fmt_opt(r.mrr),
            fmt_opt(r.recall)
        ));
        if !r.note.is_empty() {
            s.push_str(&format!("  ({})", r.note));
        }
        s.push('\n');
    }
    s
}

pub fn ablate(ws: &Workspace, settings: &Settings) -> Result<StageReport, CliError> {
    let (passages, fusion_inputs) = load_fusion_inputs(ws, settings)?;
    let mut inputs = Files(fusion_inputs);
    let queries = load_queries_with_embeddings(ws, &mut inputs)?;
    let qrels: QrelSet = ingest::load_qrels(inputs.add(artifact::QRELS, ws.require(artifact::QRELS)?))?;
    let dir = ws.path(artifact::ABLATE_DIR);
    ws.ensure(&dir)?;
    let mut outputs = Files::new();
    let mut rows = Vec::new();
    for strategy in ABLATION_GRID {
        let w0 = if strategy.uses_w0() { settings.w0 } else { 1.0 };
        let spec = FusionSpec::new(strategy, w0).map_err(|e| CliError::Usage(e.to_string()))?;
        let shown_w0 = strategy.uses_w0().then_some(w0);
        let fused = match fuse_records(&passages, &spec, settings.sentence_level) {
            Ok((records, _)) => records,
            Err(e @ FusionError::MissingField { .. }) => {
                rows.push(AblationRow {
                    strategy,
                    w0: shown_w0,
                    ndcg: None,
                    mrr: None,
                    recall: None,
                    evaluated: 0,
                    note: e.to_string(),
                });
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let index = index_from_fused(&fused, settings.sentence_level)?;
        let runs = run_queries(&index, &queries, settings.k)?;
        let run_name = format!("{}/run.{}.trec", artifact::ABLATE_DIR, strategy.as_str());
        write_run(&runs, &outputs.add(run_name.clone(), ws.path(&run_name)))?;
        let row = match metrics::evaluate_run(&runs, &qrels, settings.eval) {
            Ok(r) => AblationRow {
                strategy,
                w0: shown_w0,
                ndcg: Some(r.ndcg),
                mrr: Some(r.mrr),
                recall: Some(r.recall),
                evaluated: r.evaluated(),
                note: String::new(),
            },
            Err(e @ MetricError::NothingToEvaluate) => AblationRow {
                strategy,
                w0: shown_w0,
                ndcg: None,
                mrr: None,
                recall: None,
                evaluated: 0,
                note: e.to_string(),
            },
            Err(e) => return Err(e.into()),
        };
        rows.push(row);
    }
    let table_path = outputs.add(artifact::ABLATION, ws.path(artifact::ABLATION));
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(&table_path)
        .map_err(|e| CliError::Input(e.to_string()))?;
    w.write_record(["strategy", "w0", "ndcg", "mrr", "recall", "evaluated", "note"])
        .and_then(|_| {
            rows.iter().try_for_each(|r| {
                let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| x.to_string());
                w.write_record([
                    r.strategy.as_str().to_string(),
                    opt(r.w0),
                    opt(r.ndcg),
                    opt(r.mrr),
                    opt(r.recall),
                    r.evaluated.to_string(),
                    r.note.clone(),
                ])
            })
        })
        .and_then(|_| w.flush().map_err(csv::Error::from))
        .map_err(|e| CliError::Input(format!("{}: {e}", table_path.display())))?;
    let summary = render_ablation(&rows, settings.eval);
    finish(ws, settings, "ablate", inputs, outputs, summary, json!({"rows": rows}))
}

#[derive(Debug, Clone)]
pub struct SimulationArgs {
    pub groups: usize,
    pub dim: usize,
    pub m: usize,
    pub sigma: f64,
    pub center_scale: f64,
    pub seeds: usize,
    pub grid: Vec<f64>,
}

pub fn simulate_rb(ws: &Workspace, settings: &Settings, args: &SimulationArgs) -> Result<StageReport, CliError> {
    ws.ensure(ws.root())?;
    if args.seeds == 0 {
        return Err(CliError::Usage("seeds must be positive".into()));
    }
    let base = GroupModel::new(args.groups, args.dim, args.m, args.sigma, args.center_scale, settings.seed)?;
    let mut outputs = Files::new();
    let csv_path = outputs.add(artifact::RB_CSV, ws.path(artifact::RB_CSV));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| CliError::Input(e.to_string()))?;
    let csv_err = |e: csv::Error| CliError::Input(format!("{}: {e}", artifact::RB_CSV));
    w.write_record(["w0", "seed", "recall"]).map_err(csv_err)?;
    let mut sums = vec![0.0; args.grid.len()];
    let mut ratios = Vec::with_capacity(args.seeds);
    let mut mse_never_worse = true;
    for i in 0..args.seeds {
        let seed = settings.seed + i as u64;
        let model = base.with_seed(seed);
        let points = rbsim::simulate_retrieval(&model, &args.grid)?;
        for (sum, p) in sums.iter_mut().zip(&points) {
            *sum += p.recall_at_1;
            w.write_record([p.w0.to_string(), seed.to_string(), p.recall_at_1.to_string()])
                .map_err(csv_err)?;
        }
        let mse = rbsim::simulate_estimators(&model)?;
        mse_never_worse &= mse.mse_mean <= mse.mse_single;
        ratios.push(mse.ratio());
    }
    w.flush().map_err(|e| CliError::io(&csv_path)(e))?;
    let n = args.seeds as f64;
    let mean_recall: Vec<Value> = args
        .grid
        .iter()
        .zip(&sums)
        .map(|(w0, s)| json!({"w0": w0, "mean_recall_at_1": s / n}))
        .collect();
    let finite: Vec<f64> = ratios.iter().copied().filter(|r| r.is_finite()).collect();
    let mean_ratio = (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
    let summary_json = json!({
        "model": base,
        "seeds": args.seeds,
        "recall_at_1": mean_recall,
        "mse_ratio_mean": mean_ratio,
        "mse_ratio_expected": 1.0 / args.m as f64,
        "mse_mean_never_worse": mse_never_worse,
    });
    let spath = outputs.add(artifact::RB_SUMMARY, ws.path(artifact::RB_SUMMARY));
    let mut s = serde_json::to_string_pretty(&summary_json).expect("summary serializes");
    s.push('\n');
    std::fs::write(&spath, s).map_err(CliError::io(&spath))?;

    let mut summary = format!("{:>6} {:>12}\n", "w0", "recall@1");
    for (w0, s) in args.grid.iter().zip(&sums) {
        summary.push_str(&format!("{w0:>6} {:>12.4}\n", s / n));
    }
    summary.push_str(&format!(
        "mse ratio {} (expected {:.4}) over {} seeds",
        mean_ratio.map_or_else(|| "n/a".into(), |r| format!("{r:.4}")),
        1.0 / args.m as f64,
        args.seeds
    ));
    finish(ws, settings, "simulate-rb", Files::new(), outputs, summary, summary_json)
}
