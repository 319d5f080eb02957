//! Exact cosine top-k search over fused representations.
//!
//! Rows are unit-normalized at build time and stored contiguously, so a
//! query costs one normalization plus one dot product per row. The exact
//! `f64` norm of each stored `f32` row is kept alongside, so scores are true
//! cosines of what is stored. With
//! sentence-level indexing a passage owns several rows and is scored by the
//! maximum over them. Ties are broken by ascending passage id.
//!
//! # File layout
//!
//! All integers little-endian.
//!
//! | field | type |
//! | ----- | ---- |
//! | magic | `b"QFUSEIDX"` |
//! | version | `u32` (= 1) |
//! | dim | `u32` |
//! | rows | `u64` |
//! | vectors | `rows * dim` x `f32`, row-major |
//! | meta, per row | `u32` id length, UTF-8 passage id, `u32` ordinal (`0xFFFF_FFFF` = passage-level row) |

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::datamodel::{EmbeddingVector, Hit, PassageRecord, QueryRecord, RankedList, ValidationError};
use crate::exec::Exec;

pub const INDEX_MAGIC: &[u8; 8] = b"QFUSEIDX";
pub const INDEX_VERSION: u32 = 1;
const PASSAGE_LEVEL: u32 = u32::MAX;
const NORM_TOLERANCE: f64 = 1e-6;
/// Row count above which a single query scan is split across threads.
const PAR_MIN_ROWS: usize = 16_384;
const SCAN_CHUNK: usize = 4_096;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("passage {passage_id} has no fused vector{}", .ordinal.map(|o| format!(" for sentence {o}")).unwrap_or_default())]
    MissingFused {
        passage_id: String,
        ordinal: Option<usize>,
    },
    #[error("zero vector{}", .0.as_ref().map(|id| format!(" for {id}")).unwrap_or_default())]
    ZeroVector(Option<String>),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("passage {0} appears more than once")]
    DuplicatePassage(String),
    #[error("query {0} has no embedding")]
    MissingQueryEmbedding(String),
    #[error("k must be positive")]
    ZeroK,
    #[error("index is empty")]
    EmptyIndex,
    #[error("index file: {0}")]
    Format(String),
    #[error("index i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RowMeta {
    passage: u32,
    ordinal: u32,
}

/// Immutable, unit-normalized row matrix with per-row passage metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    rows: Vec<f32>,
    meta: Vec<RowMeta>,
    /// Passage ids, sorted ascending.
    passages: Vec<String>,
    /// `offsets[p]..offsets[p + 1]` are the rows of passage `p`.
    offsets: Vec<usize>,
    /// Exact inverse norms of the stored `f32` rows.
    inv_norms: Vec<f64>,
}

pub fn build_index(
    passages: &[PassageRecord],
    sentence_level: bool,
) -> Result<VectorIndex, RetrievalError> {
    let mut sorted: Vec<&PassageRecord> = passages.iter().collect();
    sorted.sort_by(|a, b| a.passage_id().cmp(b.passage_id()));
    if let Some(w) = sorted.windows(2).find(|w| w[0].passage_id() == w[1].passage_id()) {
        return Err(RetrievalError::DuplicatePassage(w[0].passage_id().to_string()));
    }
    let mut builder = IndexBuilder::default();
    for (p_idx, passage) in sorted.iter().enumerate() {
        let id = passage.passage_id();
        if sentence_level {
            if passage.sentences().is_empty() {
                return Err(RetrievalError::MissingFused {
                    passage_id: id.to_string(),
                    ordinal: None,
                });
            }
            for s in passage.sentences() {
                let fused = s.fused().ok_or_else(|| RetrievalError::MissingFused {
                    passage_id: id.to_string(),
                    ordinal: Some(s.ordinal()),
                })?;
                builder.push(
                    fused,
                    p_idx as u32,
                    s.ordinal() as u32,
                    || format!("{id}#{}", s.ordinal()),
                )?;
            }
        } else {
            let fused = passage.fused().ok_or_else(|| RetrievalError::MissingFused {
                passage_id: id.to_string(),
                ordinal: None,
            })?;
            builder.push(fused, p_idx as u32, PASSAGE_LEVEL, || id.to_string())?;
        }
        builder.offsets.push(builder.meta.len());
    }
    builder.finish(sorted.iter().map(|p| p.passage_id().to_string()).collect())
}

#[derive(Default)]
struct IndexBuilder {
    dim: Option<usize>,
    rows: Vec<f32>,
    meta: Vec<RowMeta>,
    offsets: Vec<usize>,
}

impl IndexBuilder {
    fn push(
        &mut self,
        v: &EmbeddingVector,
        passage: u32,
        ordinal: u32,
        name: impl FnOnce() -> String,
    ) -> Result<(), RetrievalError> {
        let dim = *self.dim.get_or_insert(v.dim());
        if v.dim() != dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
        let norm = v.norm();
        if norm == 0.0 {
            return Err(RetrievalError::ZeroVector(Some(name())));
        }
        self.rows
            .extend(v.values().iter().map(|&x| (f64::from(x) / norm) as f32));
        self.meta.push(RowMeta { passage, ordinal });
        Ok(())
    }

    fn finish(mut self, passages: Vec<String>) -> Result<VectorIndex, RetrievalError> {
        let dim = self.dim.ok_or(RetrievalError::EmptyIndex)?;
        self.offsets.insert(0, 0);
        let inv_norms = inverse_norms(&self.rows, dim).map_err(RetrievalError::Format)?;
        Ok(VectorIndex {
            dim,
            rows: self.rows,
            meta: self.meta,
            passages,
            offsets: self.offsets,
            inv_norms,
        })
    }
}

fn inverse_norms(rows: &[f32], dim: usize) -> Result<Vec<f64>, String> {
    rows.chunks_exact(dim)
        .enumerate()
        .map(|(i, row)| {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(format!("row {i} is not finite"));
            }
            let norm = row.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(format!("row {i} has norm {norm}, expected 1"));
            }
            Ok(1.0 / norm)
        })
        .collect()
}

/// Dot product accumulated in `f64` with four independent lanes.
#[inline]
fn dot(row: &[f32], query: &[f64]) -> f64 {
    let mut acc = [0f64; 4];
    let rc = row.chunks_exact(4);
    let qc = query.chunks_exact(4);
    let (rr, qr) = (rc.remainder(), qc.remainder());
    for (r, q) in rc.zip(qc) {
        acc[0] += f64::from(r[0]) * q[0];
        acc[1] += f64::from(r[1]) * q[1];
        acc[2] += f64::from(r[2]) * q[2];
        acc[3] += f64::from(r[3]) * q[3];
    }
    let tail: f64 = rr.iter().zip(qr).map(|(&r, &q)| f64::from(r) * q).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Cosine similarity of two non-zero vectors of equal dimension.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if u.dim() != v.dim() {
        return Err(RetrievalError::DimensionMismatch {
            expected: u.dim(),
            found: v.dim(),
        });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(RetrievalError::ZeroVector(None));
    }
    let d: f64 = u
        .values()
        .iter()
        .zip(v.values())
        .map(|(&a, &b)| f64::from(a) * f64::from(b))
        .sum();
    Ok((d / (nu * nv)).clamp(-1.0, 1.0))
}

impl VectorIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_rows(&self) -> usize {
        self.meta.len()
    }

    pub fn num_passages(&self) -> usize {
        self.passages.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Passage id and sentence ordinal (`None` for passage-level rows).
    pub fn row_meta(&self, i: usize) -> (&str, Option<usize>) {
        let m = self.meta[i];
        let ordinal = (m.ordinal != PASSAGE_LEVEL).then_some(m.ordinal as usize);
        (&self.passages[m.passage as usize], ordinal)
    }

    pub fn passage_ids(&self) -> &[String] {
        &self.passages
    }

    fn normalized_query(&self, query: &EmbeddingVector) -> Result<Vec<f64>, RetrievalError> {
        if query.dim() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        let norm = query.norm();
        if norm == 0.0 {
            return Err(RetrievalError::ZeroVector(Some("query".into())));
        }
        Ok(query.values().iter().map(|&v| f64::from(v) / norm).collect())
    }

    /// Cosine score of every row, in row order.
    pub fn score_rows(&self, query: &EmbeddingVector, exec: Exec) -> Result<Vec<f64>, RetrievalError> {
        let q = self.normalized_query(query)?;
        Ok(self.scan(&q, exec))
    }

    fn scan(&self, q: &[f64], exec: Exec) -> Vec<f64> {
        let mut scores = vec![0f64; self.num_rows()];
        exec.fill_chunks(&mut scores, SCAN_CHUNK, |base, out| {
            for (i, s) in out.iter_mut().enumerate() {
                *s = dot(self.row(base + i), q) * self.inv_norms[base + i];
            }
        });
        scores
    }

    /// Top-`k` passages for `query`. Large indexes are scanned in parallel
    /// when the `parallel` feature is enabled.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<RankedList, RetrievalError> {
        let exec = if self.num_rows() >= PAR_MIN_ROWS {
            Exec::default()
        } else {
            Exec::Sequential
        };
        self.search_with(query, k, exec, "")
    }

    pub fn search_with(
        &self,
        query: &EmbeddingVector,
        k: usize,
        exec: Exec,
        query_id: &str,
    ) -> Result<RankedList, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let q = self.normalized_query(query)?;
        let scores = self.scan(&q, exec);
        Ok(self.top_k(&scores, k, query_id))
    }

    fn top_k(&self, row_scores: &[f64], k: usize, query_id: &str) -> RankedList {
        let mut best: Vec<(u32, f64)> = self
            .offsets
            .windows(2)
            .enumerate()
            .map(|(p, w)| {
                let max = row_scores[w[0]..w[1]]
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max);
                (p as u32, max)
            })
            .collect();
        // passage indices follow sorted ids, so index order is id order
        let cmp = |a: &(u32, f64), b: &(u32, f64)| -> Ordering {
            b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
        };
        if best.len() > k {
            best.select_nth_unstable_by(k - 1, cmp);
            best.truncate(k);
        }
        best.sort_unstable_by(cmp);
        let hits = best
            .into_iter()
            .map(|(p, score)| Hit {
                passage_id: self.passages[p as usize].clone(),
                score,
            })
            .collect();
        RankedList::new(query_id, hits).expect("top-k output is sorted and distinct")
    }

    /// Searches every query. The output order matches the input order and
    /// each list equals what [`VectorIndex::search_with`] returns for it.
    pub fn batch_search(
        &self,
        queries: &[QueryRecord],
        k: usize,
    ) -> Result<Vec<RankedList>, RetrievalError> {
        self.batch_search_with(queries, k, Exec::default())
    }

    pub fn batch_search_with(
        &self,
        queries: &[QueryRecord],
        k: usize,
        exec: Exec,
    ) -> Result<Vec<RankedList>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        for q in queries {
            if q.embedding.is_none() {
                return Err(RetrievalError::MissingQueryEmbedding(q.query_id.clone()));
            }
        }
        exec.map(queries, |q| {
            let emb = q.embedding.as_ref().expect("checked above");
            self.search_with(emb, k, Exec::Sequential, &q.query_id)
        })
        .into_iter()
        .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), RetrievalError> {
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&INDEX_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.num_rows() as u64).to_le_bytes())?;
        for v in &self.rows {
            w.write_all(&v.to_le_bytes())?;
        }
        for m in &self.meta {
            let id = self.passages[m.passage as usize].as_bytes();
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id)?;
            w.write_all(&m.ordinal.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    /// Parses an index and checks its structure plus the unit-norm
    /// invariant of every row.
    pub fn read_from(r: &mut impl Read) -> Result<Self, RetrievalError> {
        let fmt = |m: &str| RetrievalError::Format(m.to_string());
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic, "header")?;
        if &magic != INDEX_MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = read_u32(r, "header")?;
        if version != INDEX_VERSION {
            return Err(RetrievalError::Format(format!("unsupported version {version}")));
        }
        let dim = read_u32(r, "header")? as usize;
        let n_rows = read_u64(r, "header")? as usize;
        if dim == 0 || n_rows == 0 {
            return Err(fmt("dim and row count must be positive"));
        }
        let n_floats = dim
            .checked_mul(n_rows)
            .ok_or_else(|| fmt("row count overflows"))?;
        let mut raw = vec![0u8; n_floats.checked_mul(4).ok_or_else(|| fmt("row count overflows"))?];
        read_exact(r, &mut raw, "vectors")?;
        let rows: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();

        let mut passages: Vec<String> = Vec::new();
        let mut offsets = vec![0usize];
        let mut meta = Vec::with_capacity(n_rows);
        for i in 0..n_rows {
            let len = read_u32(r, "row meta")? as usize;
            let mut id = vec![0u8; len];
            read_exact(r, &mut id, "row meta")?;
            let id = String::from_utf8(id).map_err(|_| fmt("passage id is not UTF-8"))?;
            let ordinal = read_u32(r, "row meta")?;
            match passages.last() {
                Some(last) if *last == id => {}
                Some(last) if *last > id => {
                    return Err(RetrievalError::Format(format!(
                        "row {i}: passage ids are not sorted"
                    )))
                }
                _ => {
                    if !passages.is_empty() {
                        offsets.push(i);
                    }
                    passages.push(id);
                }
            }
            meta.push(RowMeta {
                passage: (passages.len() - 1) as u32,
                ordinal,
            });
        }
        offsets.push(n_rows);
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(fmt("trailing bytes after row meta"));
        }

        let inv_norms = inverse_norms(&rows, dim).map_err(RetrievalError::Format)?;
        Ok(VectorIndex {
            dim,
            rows,
            meta,
            passages,
            offsets,
            inv_norms,
        })
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), RetrievalError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => RetrievalError::Format(format!("truncated {what}")),
        _ => RetrievalError::Io(e),
    })
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32, RetrievalError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64, RetrievalError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::SentenceUnit;

    fn emb(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    fn sentence_passage(id: &str, vecs: &[&[f32]]) -> PassageRecord {
        let units = vecs
            .iter()
            .enumerate()
            .map(|(i, v)| {
                SentenceUnit::new(id, i, "s.")
                    .with_embedding(emb(v))
                    .with_fused(emb(v))
                    .unwrap()
            })
            .collect();
        PassageRecord::new(id, "", "t")
            .unwrap()
            .with_sentences(units)
            .unwrap()
            .with_fused(emb(vecs[0]))
    }

    #[test]
    fn row_counts() {
        let ps: Vec<_> = ["a", "b", "c"]
            .iter()
            .map(|id| sentence_passage(id, &[&[1.0, 0.0], &[0.0, 1.0]]))
            .collect();
        assert_eq!(build_index(&ps, true).unwrap().num_rows(), 6);
        assert_eq!(build_index(&ps, false).unwrap().num_rows(), 3);
    }

    #[test]
    fn zero_vector_rejected() {
        let p = PassageRecord::new("z", "", "t").unwrap().with_fused(emb(&[0.0, 0.0]));
        assert!(matches!(build_index(&[p], false), Err(RetrievalError::ZeroVector(_))));
    }

    #[test]
    fn build_errors() {
        let p = PassageRecord::new("p", "", "t").unwrap();
        assert!(matches!(
            build_index(std::slice::from_ref(&p), false),
            Err(RetrievalError::MissingFused { .. })
        ));
        let a = p.clone().with_fused(emb(&[1.0]));
        let b = PassageRecord::new("q", "", "t").unwrap().with_fused(emb(&[1.0, 2.0]));
        assert!(matches!(
            build_index(&[a.clone(), b], false),
            Err(RetrievalError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            build_index(&[a.clone(), a], false),
            Err(RetrievalError::DuplicatePassage(_))
        ));
        assert!(matches!(build_index(&[], false), Err(RetrievalError::EmptyIndex)));
    }

    #[test]
    fn cosine_values() {
        let u = emb(&[1.0, 1.0]);
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0])).unwrap().abs() < 1e-12);
        assert!((cosine(&u, &emb(&[1.0, 0.0])).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(
            cosine(&u, &emb(&[0.0, 0.0])),
            Err(RetrievalError::ZeroVector(_))
        ));
        assert!(matches!(
            cosine(&u, &emb(&[1.0])),
            Err(RetrievalError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn exact_match_ranks_first() {
        let ps = vec![
            sentence_passage("p", &[&[0.2, 0.9, 0.1]]),
            sentence_passage("q", &[&[1.0, 0.0, 0.0]]),
        ];
        let idx = build_index(&ps, true).unwrap();
        let r = idx.search(&emb(&[0.2, 0.9, 0.1]), 1).unwrap();
        assert_eq!(r.hits()[0].passage_id, "p");
        assert!((r.hits()[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn max_aggregation_trace() {
        // query e1; A's sentences score 0.9 and 0.1, B's single sentence 0.5
        let s = |c: f32| [c, (1.0 - c * c).sqrt()];
        let (a1, a2, b1) = (s(0.9), s(0.1), s(0.5));
        let ps = vec![
            sentence_passage("A", &[&a1, &a2]),
            sentence_passage("B", &[&b1]),
        ];
        let idx = build_index(&ps, true).unwrap();
        let r = idx.search(&emb(&[1.0, 0.0]), 2).unwrap();
        let got: Vec<_> = r.hits().iter().map(|h| (h.passage_id.as_str(), h.score)).collect();
        assert_eq!(got[0].0, "A");
        assert!((got[0].1 - 0.9).abs() < 1e-6);
        assert_eq!(got[1].0, "B");
        assert!((got[1].1 - 0.5).abs() < 1e-6);
    }

    #[test]
    fn k_larger_than_corpus_and_ties() {
        let ps = vec![
            sentence_passage("b", &[&[1.0, 0.0]]),
            sentence_passage("a", &[&[1.0, 0.0]]),
            sentence_passage("c", &[&[0.0, 1.0]]),
        ];
        let idx = build_index(&ps, true).unwrap();
        let r = idx.search(&emb(&[1.0, 0.0]), 10).unwrap();
        let ids: Vec<_> = r.hits().iter().map(|h| h.passage_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
        let r = idx.search(&emb(&[1.0, 0.0]), 1).unwrap();
        assert_eq!(r.hits()[0].passage_id, "a");
        assert!(matches!(idx.search(&emb(&[1.0, 0.0]), 0), Err(RetrievalError::ZeroK)));
        assert!(matches!(
            idx.search(&emb(&[0.0, 0.0]), 1),
            Err(RetrievalError::ZeroVector(_))
        ));
        assert!(matches!(
            idx.search(&emb(&[1.0]), 1),
            Err(RetrievalError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn batch_edge_cases() {
        let idx = build_index(&[sentence_passage("a", &[&[1.0, 0.0]])], true).unwrap();
        assert!(idx.batch_search(&[], 5).unwrap().is_empty());
        let q = QueryRecord::new("q1", "x").with_embedding(emb(&[0.5, 0.5]));
        let out = idx.batch_search(std::slice::from_ref(&q), 5).unwrap();
        assert_eq!(out, vec![idx.search_with(q.embedding.as_ref().unwrap(), 5, Exec::Sequential, "q1").unwrap()]);
        assert!(matches!(
            idx.batch_search(&[QueryRecord::new("q2", "y")], 5),
            Err(RetrievalError::MissingQueryEmbedding(_))
        ));
    }

    #[test]
    fn file_roundtrip_and_corruption() {
        let ps = vec![
            sentence_passage("b", &[&[1.0, 2.0], &[3.0, -1.0]]),
            sentence_passage("a", &[&[0.5, 0.5]]),
        ];
        let idx = build_index(&ps, true).unwrap();
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        let back = VectorIndex::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.row_meta(1), ("b", Some(0)));

        let passage_level = build_index(&ps, false).unwrap();
        let mut buf2 = Vec::new();
        passage_level.write_to(&mut buf2).unwrap();
        let back2 = VectorIndex::read_from(&mut buf2.as_slice()).unwrap();
        assert_eq!(back2.row_meta(0), ("a", None));

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(VectorIndex::read_from(&mut bad.as_slice()), Err(RetrievalError::Format(_))));
        assert!(matches!(
            VectorIndex::read_from(&mut &buf[..buf.len() - 3]),
            Err(RetrievalError::Format(_))
        ));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(VectorIndex::read_from(&mut extra.as_slice()).is_err());
        // break the norm of the first row
        let mut denorm = buf.clone();
        denorm[24..28].copy_from_slice(&5.0f32.to_le_bytes());
        assert!(matches!(
            VectorIndex::read_from(&mut denorm.as_slice()),
            Err(RetrievalError::Format(_))
        ));
    }
}
