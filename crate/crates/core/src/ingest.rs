//! Loading and persisting corpora, queries, judgments, embeddings and
//! synthetic queries.
//!
//! Text formats follow the BEIR layout: corpus and queries are JSONL with
//! `_id`, `text` and optional `title`; qrels are tab-separated
//! `query-id corpus-id score` with an optional header line. Loaders reject
//! malformed input and report the 1-based line number.
//!
//! Embeddings use a small binary format (little-endian):
//!
//! | field | type |
//! | ----- | ---- |
//! | magic | `b"QFUSEEMB"` |
//! | version | `u32` (= 1) |
//! | dim | `u32` |
//! | count | `u64` |
//! | per record | `u32` id length, UTF-8 id, `u32` dim, `dim` x `f32` |

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::datamodel::{
    EmbeddingVector, PassageRecord, QrelSet, QueryKind, QueryRecord, SyntheticQuery,
    ValidationError,
};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"QFUSEEMB";
pub const EMBEDDING_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId { path: String, line: usize, id: String },
    #[error("target size {target} is smaller than the {required} judged passages")]
    TargetTooSmall { target: usize, required: usize },
    #[error("target size {target} exceeds the corpus size {available}")]
    TargetTooLarge { target: usize, available: usize },
    #[error("embedding {id:?} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

fn create(path: &Path) -> Result<BufWriter<File>, IngestError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// A non-blank JSONL line with its 1-based number.
fn json_lines<'a, R: BufRead + 'a>(
    reader: R,
    path: &'a Path,
) -> impl Iterator<Item = Result<(usize, Value), IngestError>> + 'a {
    reader.lines().enumerate().filter_map(move |(i, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(io_err(path)(e))),
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(
            serde_json::from_str::<Value>(&line)
                .map(|v| (i + 1, v))
                .map_err(|e| IngestError::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                }),
        )
    })
}

fn field_id(v: &Value, key: &str) -> Option<String> {
    match v.get(key)? {
        Value::String(s) if !s.is_empty() => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn field_str<'a>(v: &'a Value, key: &str) -> Option<&'a str> {
    v.get(key)?.as_str()
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<PassageRecord>, IngestError> {
    let path = path.as_ref();
    parse_corpus(open(path)?, path)
}

pub fn parse_corpus(reader: impl BufRead, path: &Path) -> Result<Vec<PassageRecord>, IngestError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in json_lines(reader, path) {
        let (line, v) = item?;
        let parse = |message: &str| IngestError::Parse {
            path: path.display().to_string(),
            line,
            message: message.to_string(),
        };
        let id = field_id(&v, "_id").ok_or_else(|| parse("missing or empty `_id`"))?;
        let text = field_str(&v, "text").ok_or_else(|| parse("missing string `text`"))?;
        let title = match v.get("title") {
            None | Some(Value::Null) => "",
            Some(Value::String(s)) => s.as_str(),
            Some(_) => return Err(parse("`title` must be a string")),
        };
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateId {
                path: path.display().to_string(),
                line,
                id,
            });
        }
        out.push(PassageRecord::new(id, title, text)?);
    }
    Ok(out)
}

pub fn save_corpus(passages: &[PassageRecord], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for p in passages {
        let line = serde_json::json!({"_id": p.passage_id(), "title": p.title(), "text": p.text()});
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<QueryRecord>, IngestError> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in json_lines(open(path)?, path) {
        let (line, v) = item?;
        let parse = |message: &str| IngestError::Parse {
            path: path.display().to_string(),
            line,
            message: message.to_string(),
        };
        let id = field_id(&v, "_id").ok_or_else(|| parse("missing or empty `_id`"))?;
        let text = field_str(&v, "text").ok_or_else(|| parse("missing string `text`"))?;
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateId {
                path: path.display().to_string(),
                line,
                id,
            });
        }
        out.push(QueryRecord::new(id, text));
    }
    Ok(out)
}

pub fn save_queries(queries: &[QueryRecord], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for q in queries {
        let line = serde_json::json!({"_id": q.query_id, "text": q.text});
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<QrelSet, IngestError> {
    let path = path.as_ref();
    parse_qrels(open(path)?, path)
}

/// Parses `query corpus grade` (BEIR) or `query iteration corpus grade`
/// (TREC) lines separated by tabs or spaces. The first line may be a header.
pub fn parse_qrels(reader: impl BufRead, path: &Path) -> Result<QrelSet, IngestError> {
    let mut qrels = QrelSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| IngestError::Parse {
            path: path.display().to_string(),
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (qid, pid, grade) = match fields.as_slice() {
            [q, p, g] | [q, _, p, g] => (*q, *p, *g),
            _ => return Err(parse(format!("expected 3 or 4 fields, found {}", fields.len()))),
        };
        let grade = match grade.parse::<i64>() {
            Ok(g) if g >= 0 && g <= i64::from(u32::MAX) => g as u32,
            Ok(g) => return Err(parse(format!("grade {g} must be a non-negative integer"))),
            Err(_) if line_no == 1 => continue,
            Err(_) => return Err(parse(format!("grade {grade:?} is not an integer"))),
        };
        if qrels.insert(qid, pid, grade).is_some() {
            return Err(parse(format!("duplicate judgment for ({qid}, {pid})")));
        }
    }
    Ok(qrels)
}

pub fn save_qrels(qrels: &QrelSet, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    writeln!(w, "query-id\tcorpus-id\tscore").map_err(io_err(path))?;
    for (q, d, g) in qrels.iter() {
        writeln!(w, "{q}\t{d}\t{g}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QrelWarning {
    UnknownPassage { query_id: String, passage_id: String },
    UnknownQuery { query_id: String },
}

/// Cross-checks judgments against the loaded corpus (and optionally the
/// query set). Unknown ids are reported; the judgments themselves are kept.
pub fn check_qrels(
    qrels: &QrelSet,
    passages: &[PassageRecord],
    queries: Option<&[QueryRecord]>,
) -> Vec<QrelWarning> {
    let corpus: HashSet<&str> = passages.iter().map(PassageRecord::passage_id).collect();
    let mut warnings: Vec<QrelWarning> = qrels
        .iter()
        .filter(|(_, d, _)| !corpus.contains(d))
        .map(|(q, d, _)| QrelWarning::UnknownPassage {
            query_id: q.to_string(),
            passage_id: d.to_string(),
        })
        .collect();
    if let Some(queries) = queries {
        let known: HashSet<&str> = queries.iter().map(|q| q.query_id.as_str()).collect();
        warnings.extend(
            qrels
                .query_ids()
                .filter(|q| !known.contains(q))
                .map(|q| QrelWarning::UnknownQuery {
                    query_id: q.to_string(),
                }),
        );
    }
    warnings
}

/// Keeps every judged passage and fills up to `target_size` with a seeded
/// sample of the others. Sampling runs over ids sorted lexicographically
/// and the output is sorted by id, so input order does not matter.
pub fn downsample_corpus(
    passages: &[PassageRecord],
    qrels: &QrelSet,
    target_size: usize,
    seed: u64,
) -> Result<Vec<PassageRecord>, IngestError> {
    let judged = qrels.passage_ids();
    let (relevant, mut others): (Vec<&str>, Vec<&str>) = passages
        .iter()
        .map(PassageRecord::passage_id)
        .partition(|id| judged.contains(id));
    if target_size < relevant.len() {
        return Err(IngestError::TargetTooSmall {
            target: target_size,
            required: relevant.len(),
        });
    }
    if target_size > passages.len() {
        return Err(IngestError::TargetTooLarge {
            target: target_size,
            available: passages.len(),
        });
    }
    others.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sampled, _) = others.partial_shuffle(&mut rng, target_size - relevant.len());
    let keep: BTreeSet<&str> = relevant.iter().chain(sampled.iter()).copied().collect();
    let mut out: Vec<PassageRecord> = passages
        .iter()
        .filter(|p| keep.contains(p.passage_id()))
        .cloned()
        .collect();
    out.sort_by(|a, b| a.passage_id().cmp(b.passage_id()));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: EmbeddingVector,
}

impl EmbeddingRecord {
    pub fn new(id: impl Into<String>, vector: EmbeddingVector) -> Self {
        Self { id: id.into(), vector }
    }
}

pub fn save_embeddings(records: &[EmbeddingRecord], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    write_embeddings(records, &mut w).map_err(|e| match e {
        EmbeddingWriteError::Io(source) => io_err(path)(source),
        EmbeddingWriteError::Ingest(e) => e,
    })?;
    w.flush().map_err(io_err(path))
}

enum EmbeddingWriteError {
    Io(std::io::Error),
    Ingest(IngestError),
}

impl From<std::io::Error> for EmbeddingWriteError {
    fn from(e: std::io::Error) -> Self {
        EmbeddingWriteError::Io(e)
    }
}

fn write_embeddings(records: &[EmbeddingRecord], w: &mut impl Write) -> Result<(), EmbeddingWriteError> {
    let dim = records.first().map_or(0, |r| r.vector.dim());
    if let Some(r) = records.iter().find(|r| r.vector.dim() != dim) {
        return Err(EmbeddingWriteError::Ingest(IngestError::DimensionMismatch {
            id: r.id.clone(),
            expected: dim,
            found: r.vector.dim(),
        }));
    }
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in records {
        w.write_all(&(r.id.len() as u32).to_le_bytes())?;
        w.write_all(r.id.as_bytes())?;
        w.write_all(&(r.vector.dim() as u32).to_le_bytes())?;
        for v in r.vector.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRecord>, IngestError> {
    let path = path.as_ref();
    read_embeddings(&mut open(path)?, path)
}

pub fn read_embeddings(r: &mut impl Read, path: &Path) -> Result<Vec<EmbeddingRecord>, IngestError> {
    // binary format: "line" is the 1-based record number, 0 for the header
    let parse = |line: usize, message: String| IngestError::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut exact = |buf: &mut [u8], line: usize| -> Result<(), IngestError> {
        r.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => parse(line, "truncated file".into()),
            _ => io_err(path)(e),
        })
    };
    let mut magic = [0u8; 8];
    exact(&mut magic, 0)?;
    if &magic != EMBEDDING_MAGIC {
        return Err(parse(0, "bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    exact(&mut b4, 0)?;
    let version = u32::from_le_bytes(b4);
    if version != EMBEDDING_VERSION {
        return Err(parse(0, format!("unsupported version {version}")));
    }
    exact(&mut b4, 0)?;
    let dim = u32::from_le_bytes(b4) as usize;
    exact(&mut b8, 0)?;
    let count = u64::from_le_bytes(b8) as usize;
    if dim == 0 && count > 0 {
        return Err(parse(0, "zero dimension with non-empty payload".into()));
    }
    let mut out = Vec::with_capacity(count.min(1 << 20));
    let mut seen = HashSet::new();
    for rec in 1..=count {
        exact(&mut b4, rec)?;
        let mut id = vec![0u8; u32::from_le_bytes(b4) as usize];
        exact(&mut id, rec)?;
        let id = String::from_utf8(id).map_err(|_| parse(rec, "id is not UTF-8".into()))?;
        exact(&mut b4, rec)?;
        let rec_dim = u32::from_le_bytes(b4) as usize;
        if rec_dim != dim {
            return Err(IngestError::DimensionMismatch {
                id,
                expected: dim,
                found: rec_dim,
            });
        }
        let mut raw = vec![0u8; dim * 4];
        exact(&mut raw, rec)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let vector = EmbeddingVector::new(values).map_err(|e| parse(rec, e.to_string()))?;
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateId {
                path: path.display().to_string(),
                line: rec,
                id,
            });
        }
        out.push(EmbeddingRecord { id, vector });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(io_err(path))? != 0 {
        return Err(parse(count, "trailing bytes after last record".into()));
    }
    Ok(out)
}

/// On-disk shape of one synthetic query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SyntheticLine {
    passage_id: String,
    kind: QueryKind,
    text: String,
    gen_prob: f64,
    #[serde(default)]
    passed_filter: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bertscore_f1: Option<f64>,
}

/// Synthetic queries tagged with the passage they were generated from.
pub type SyntheticSet = Vec<(String, SyntheticQuery)>;

pub fn save_synthetic(queries: &[(String, SyntheticQuery)], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for (pid, q) in queries {
        let line = SyntheticLine {
            passage_id: pid.clone(),
            kind: q.kind(),
            text: q.text().to_string(),
            gen_prob: q.gen_prob(),
            passed_filter: q.passed_filter(),
            bertscore_f1: q.bertscore_f1(),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| io_err(path)(e.into()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn load_synthetic(path: impl AsRef<Path>) -> Result<SyntheticSet, IngestError> {
    let path = path.as_ref();
    parse_synthetic(open(path)?, path)
}

pub fn parse_synthetic(reader: impl BufRead, path: &Path) -> Result<SyntheticSet, IngestError> {
    let mut out = Vec::new();
    for item in json_lines(reader, path) {
        let (line, v) = item?;
        let parse = |message: String| IngestError::Parse {
            path: path.display().to_string(),
            line,
            message,
        };
        let rec: SyntheticLine = serde_json::from_value(v).map_err(|e| parse(e.to_string()))?;
        if rec.passage_id.is_empty() {
            return Err(parse("empty passage_id".into()));
        }
        let mut q = SyntheticQuery::new(rec.kind, rec.text, rec.gen_prob)
            .map_err(|e| parse(e.to_string()))?
            .with_filter_verdict(rec.passed_filter);
        if let Some(s) = rec.bertscore_f1 {
            q = q.with_bertscore(s).map_err(|e| parse(e.to_string()))?;
        }
        out.push((rec.passage_id, q));
    }
    Ok(out)
}

/// On-disk shape of one segmented sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentLine {
    pub passage_id: String,
    pub ordinal: usize,
    pub text: String,
}

pub fn save_segments(lines: &[SegmentLine], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for l in lines {
        serde_json::to_writer(&mut w, l).map_err(|e| io_err(path)(e.into()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn load_segments(path: impl AsRef<Path>) -> Result<Vec<SegmentLine>, IngestError> {
    let path = path.as_ref();
    json_lines(open(path)?, path)
        .map(|item| {
            let (line, v) = item?;
            serde_json::from_value(v).map_err(|e| IngestError::Parse {
                path: path.display().to_string(),
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn corpus_parsing() {
        let ok = "{\"_id\":\"d1\",\"title\":\"T\",\"text\":\"a\"}\n\n{\"_id\":2,\"text\":\"b\"}\n";
        let c = parse_corpus(Cursor::new(ok), p()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].title(), "T");
        assert_eq!(c[1].passage_id(), "2");

        let missing = "{\"_id\":\"d1\",\"text\":\"a\"}\n{\"text\":\"b\"}\n";
        assert!(matches!(
            parse_corpus(Cursor::new(missing), p()),
            Err(IngestError::Parse { line: 2, .. })
        ));
        let dup = "{\"_id\":\"d1\",\"text\":\"a\"}\n{\"_id\":\"d1\",\"text\":\"b\"}\n";
        assert!(matches!(
            parse_corpus(Cursor::new(dup), p()),
            Err(IngestError::DuplicateId { line: 2, .. })
        ));
        assert!(matches!(
            parse_corpus(Cursor::new("not json\n"), p()),
            Err(IngestError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn qrels_parsing() {
        let q = parse_qrels(Cursor::new("query-id\tcorpus-id\tscore\nq1\td7\t1\n"), p()).unwrap();
        assert_eq!(q.grade("q1", "d7"), Some(1));
        let q = parse_qrels(Cursor::new("q1 d7 1\nq2 0 d8 2\n"), p()).unwrap();
        assert_eq!(q.grade("q1", "d7"), Some(1));
        assert_eq!(q.grade("q2", "d8"), Some(2));
        assert!(matches!(
            parse_qrels(Cursor::new("q1\td7\t1\nq1\td8\t-1\n"), p()),
            Err(IngestError::Parse { line: 2, .. })
        ));
        assert!(parse_qrels(Cursor::new("q1\td7\t1\nq1\td8\tx\n"), p()).is_err());
        assert!(parse_qrels(Cursor::new("q1\td7\n"), p()).is_err());
        assert!(parse_qrels(Cursor::new("q1 d7 1\nq1 d7 2\n"), p()).is_err());
    }

    #[test]
    fn unknown_ids_warn() {
        let corpus = vec![PassageRecord::new("d1", "", "x").unwrap()];
        let mut q = QrelSet::new();
        q.insert("q1", "d1", 1);
        q.insert("q1", "d9", 1);
        let w = check_qrels(&q, &corpus, Some(&[QueryRecord::new("q2", "t")]));
        assert_eq!(
            w,
            vec![
                QrelWarning::UnknownPassage {
                    query_id: "q1".into(),
                    passage_id: "d9".into()
                },
                QrelWarning::UnknownQuery { query_id: "q1".into() },
            ]
        );
        assert_eq!(q.len(), 2);
    }

    fn corpus(n: usize) -> Vec<PassageRecord> {
        (0..n)
            .map(|i| PassageRecord::new(format!("d{i:03}"), "", format!("text {i}")).unwrap())
            .collect()
    }

    fn judged(n: usize) -> QrelSet {
        let mut q = QrelSet::new();
        for i in 0..n {
            q.insert(format!("q{}", i % 3), format!("d{:03}", i * 7), 1);
        }
        q
    }

    #[test]
    fn downsample_boundaries() {
        let c = corpus(100);
        let q = judged(10);
        let exact = downsample_corpus(&c, &q, 10, 1).unwrap();
        let ids: BTreeSet<_> = exact.iter().map(|p| p.passage_id().to_string()).collect();
        let want: BTreeSet<_> = q.passage_ids().into_iter().map(String::from).collect();
        assert_eq!(ids, want);
        assert!(matches!(
            downsample_corpus(&c, &q, 9, 1),
            Err(IngestError::TargetTooSmall { target: 9, required: 10 })
        ));
        assert!(matches!(
            downsample_corpus(&c, &q, 101, 1),
            Err(IngestError::TargetTooLarge { .. })
        ));
    }

    #[test]
    fn downsample_deterministic_and_order_free() {
        let c = corpus(100);
        let q = judged(10);
        let a = downsample_corpus(&c, &q, 50, 42).unwrap();
        let b = downsample_corpus(&c, &q, 50, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        let mut rev = c.clone();
        rev.reverse();
        assert_eq!(downsample_corpus(&rev, &q, 50, 42).unwrap(), a);
        assert_ne!(downsample_corpus(&c, &q, 50, 43).unwrap(), a);
    }

    fn emb(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn embedding_roundtrip_bit_exact() {
        let recs: Vec<_> = (0..3)
            .map(|i| {
                EmbeddingRecord::new(
                    format!("id{i}"),
                    emb(&(0..8).map(|j| (i * 8 + j) as f32 * 0.1 - 1.3).collect::<Vec<_>>()),
                )
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        save_embeddings(&recs, &path).unwrap();
        let back = load_embeddings(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            let bits = |v: &EmbeddingVector| v.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.vector), bits(&b.vector));
        }
    }

    #[test]
    fn embedding_corruption_and_mixed_dims() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        save_embeddings(&[EmbeddingRecord::new("a", emb(&[1.0, 2.0]))], &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[3] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_embeddings(&path), Err(IngestError::Parse { line: 0, .. })));

        let mixed = [
            EmbeddingRecord::new("a", emb(&[1.0, 2.0])),
            EmbeddingRecord::new("b", emb(&[1.0])),
        ];
        assert!(matches!(
            save_embeddings(&mixed, &path),
            Err(IngestError::DimensionMismatch { .. })
        ));

        // hand-assembled file whose second record disagrees with the header
        let mut raw = Vec::new();
        raw.extend_from_slice(EMBEDDING_MAGIC);
        raw.extend_from_slice(&1u32.to_le_bytes());
        raw.extend_from_slice(&2u32.to_le_bytes());
        raw.extend_from_slice(&2u64.to_le_bytes());
        for (id, vals) in [("a", vec![1.0f32, 2.0]), ("b", vec![3.0f32])] {
            raw.extend_from_slice(&(id.len() as u32).to_le_bytes());
            raw.extend_from_slice(id.as_bytes());
            raw.extend_from_slice(&(vals.len() as u32).to_le_bytes());
            vals.iter().for_each(|v| raw.extend_from_slice(&v.to_le_bytes()));
        }
        assert!(matches!(
            read_embeddings(&mut raw.as_slice(), p()),
            Err(IngestError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            read_embeddings(&mut &raw[..raw.len() - 6], p()),
            Err(IngestError::DimensionMismatch { .. }) | Err(IngestError::Parse { .. })
        ));
    }

    #[test]
    fn synthetic_roundtrip_and_errors() {
        let qs = vec![
            (
                "d1".to_string(),
                SyntheticQuery::new(QueryKind::Question, "What is it?", 0.42)
                    .unwrap()
                    .with_filter_verdict(true)
                    .with_bertscore(0.8)
                    .unwrap(),
            ),
            (
                "d1".to_string(),
                SyntheticQuery::new(QueryKind::Keywords, "a, b", 0.1).unwrap(),
            ),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        save_synthetic(&qs, &path).unwrap();
        assert_eq!(load_synthetic(&path).unwrap(), qs);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.lines().nth(1).unwrap().contains("bertscore"));

        let bad_prob = r#"{"passage_id":"d","kind":"question","text":"x?","gen_prob":0}"#;
        assert!(matches!(
            parse_synthetic(Cursor::new(bad_prob), p()),
            Err(IngestError::Parse { line: 1, .. })
        ));
        let bad_kind = r#"{"passage_id":"d","kind":"summary","text":"x","gen_prob":0.5}"#;
        assert!(parse_synthetic(Cursor::new(bad_kind), p()).is_err());
        let bad_score = r#"{"passage_id":"d","kind":"question","text":"x?","gen_prob":0.5,"bertscore_f1":2}"#;
        assert!(parse_synthetic(Cursor::new(bad_score), p()).is_err());
    }

    #[test]
    fn segments_roundtrip() {
        let lines = vec![
            SegmentLine { passage_id: "d".into(), ordinal: 0, text: "A.".into() },
            SegmentLine { passage_id: "d".into(), ordinal: 1, text: "B.".into() },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.jsonl");
        save_segments(&lines, &path).unwrap();
        assert_eq!(load_segments(&path).unwrap(), lines);
    }
}
