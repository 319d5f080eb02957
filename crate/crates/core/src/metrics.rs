//! trec_eval-style retrieval metrics.
//!
//! NDCG uses exponential gain `2^grade - 1` with a `log2(rank + 1)`
//! discount. MRR and Recall treat any grade `>= 1` as relevant. Queries
//! without a relevant passage are skipped and reported, not scored as zero.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{Hit, QrelSet, RankedList, ValidationError};
use crate::exec::Exec;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("query {0} has no relevant passage")]
    NoRelevant(String),
    #[error("run is empty")]
    EmptyRun,
    #[error("no query in the run has relevance judgments")]
    NothingToEvaluate,
    #[error("query {0} appears twice in the run")]
    DuplicateQuery(String),
    #[error("cutoff must be positive")]
    ZeroCutoff,
    #[error("run file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("run i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cutoffs {
    pub ndcg: usize,
    pub mrr: usize,
    pub recall: usize,
}

impl Default for Cutoffs {
    fn default() -> Self {
        Self {
            ndcg: 10,
            mrr: 100,
            recall: 100,
        }
    }
}

fn judged<'a>(
    ranked: &RankedList,
    qrels: &'a QrelSet,
    k: usize,
) -> Result<&'a BTreeMap<String, u32>, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroCutoff);
    }
    qrels
        .for_query(ranked.query_id())
        .filter(|j| j.values().any(|&g| g >= QrelSet::RELEVANT))
        .ok_or_else(|| MetricError::NoRelevant(ranked.query_id().to_string()))
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade.min(1023) as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

pub fn ndcg_at_k(ranked: &RankedList, qrels: &QrelSet, k: usize) -> Result<f64, MetricError> {
    let judgments = judged(ranked, qrels, k)?;
    let dcg: f64 = ranked
        .hits()
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, h)| gain(judgments.get(&h.passage_id).copied().unwrap_or(0)) / discount(i + 1))
        .sum();
    let mut ideal: Vec<u32> = judgments.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / discount(i + 1))
        .sum();
    Ok(dcg / idcg)
}

pub fn mrr_at_k(ranked: &RankedList, qrels: &QrelSet, k: usize) -> Result<f64, MetricError> {
    let judgments = judged(ranked, qrels, k)?;
    Ok(ranked
        .hits()
        .iter()
        .take(k)
        .position(|h| judgments.get(&h.passage_id).is_some_and(|&g| g >= QrelSet::RELEVANT))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64))
}

pub fn recall_at_k(ranked: &RankedList, qrels: &QrelSet, k: usize) -> Result<f64, MetricError> {
    let judgments = judged(ranked, qrels, k)?;
    let relevant = judgments.values().filter(|&&g| g >= QrelSet::RELEVANT).count();
    let found = ranked
        .hits()
        .iter()
        .take(k)
        .filter(|h| judgments.get(&h.passage_id).is_some_and(|&g| g >= QrelSet::RELEVANT))
        .count();
    Ok(found as f64 / relevant as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScores {
    pub query_id: String,
    pub ndcg: f64,
    pub mrr: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cutoffs: Cutoffs,
    pub per_query: Vec<QueryScores>,
    pub ndcg: f64,
    pub mrr: f64,
    pub recall: f64,
    /// Run queries without any relevant judgment.
    pub skipped: Vec<String>,
}

impl EvalReport {
    pub fn evaluated(&self) -> usize {
        self.per_query.len()
    }

    /// One JSON object per query followed by a summary object.
    pub fn write_jsonl(&self, w: &mut impl Write) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct QueryLine<'a> {
            record: &'static str,
            #[serde(flatten)]
            scores: &'a QueryScores,
        }
        #[derive(Serialize)]
        struct SummaryLine<'a> {
            record: &'static str,
            cutoffs: Cutoffs,
            evaluated: usize,
            skipped: &'a [String],
            ndcg: f64,
            mrr: f64,
            recall: f64,
        }
        for scores in &self.per_query {
            serde_json::to_writer(&mut *w, &QueryLine { record: "query", scores })?;
            w.write_all(b"\n")?;
        }
        serde_json::to_writer(
            &mut *w,
            &SummaryLine {
                record: "summary",
                cutoffs: self.cutoffs,
                evaluated: self.evaluated(),
                skipped: &self.skipped,
                ndcg: self.ndcg,
                mrr: self.mrr,
                recall: self.recall,
            },
        )?;
        w.write_all(b"\n")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.cutoffs;
        writeln!(
            f,
            "{:<24} {:>10} {:>10} {:>10}",
            "query",
            format!("ndcg@{}", c.ndcg),
            format!("mrr@{}", c.mrr),
            format!("recall@{}", c.recall)
        )?;
        for q in &self.per_query {
            writeln!(f, "{:<24} {:>10.4} {:>10.4} {:>10.4}", q.query_id, q.ndcg, q.mrr, q.recall)?;
        }
        writeln!(
            f,
            "{:<24} {:>10.4} {:>10.4} {:>10.4}",
            "all", self.ndcg, self.mrr, self.recall
        )?;
        write!(
            f,
            "evaluated {} queries, skipped {}",
            self.evaluated(),
            self.skipped.len()
        )
    }
}

pub fn evaluate_run(
    runs: &[RankedList],
    qrels: &QrelSet,
    cutoffs: Cutoffs,
) -> Result<EvalReport, MetricError> {
    evaluate_run_with(runs, qrels, cutoffs, Exec::default())
}

pub fn evaluate_run_with(
    runs: &[RankedList],
    qrels: &QrelSet,
    cutoffs: Cutoffs,
    exec: Exec,
) -> Result<EvalReport, MetricError> {
    if runs.is_empty() {
        return Err(MetricError::EmptyRun);
    }
    if cutoffs.ndcg == 0 || cutoffs.mrr == 0 || cutoffs.recall == 0 {
        return Err(MetricError::ZeroCutoff);
    }
    let mut seen = HashSet::new();
    for r in runs {
        if !seen.insert(r.query_id()) {
            return Err(MetricError::DuplicateQuery(r.query_id().to_string()));
        }
    }
    let scored = exec.map(runs, |r| -> Result<QueryScores, MetricError> {
        Ok(QueryScores {
            query_id: r.query_id().to_string(),
            ndcg: ndcg_at_k(r, qrels, cutoffs.ndcg)?,
            mrr: mrr_at_k(r, qrels, cutoffs.mrr)?,
            recall: recall_at_k(r, qrels, cutoffs.recall)?,
        })
    });
    let mut per_query = Vec::with_capacity(runs.len());
    let mut skipped = Vec::new();
    for s in scored {
        match s {
            Ok(q) => per_query.push(q),
            Err(MetricError::NoRelevant(id)) => skipped.push(id),
            Err(e) => return Err(e),
        }
    }
    if per_query.is_empty() {
        return Err(MetricError::NothingToEvaluate);
    }
    let n = per_query.len() as f64;
    let mean = |f: fn(&QueryScores) -> f64| per_query.iter().map(f).sum::<f64>() / n;
    Ok(EvalReport {
        cutoffs,
        ndcg: mean(|q| q.ndcg),
        mrr: mean(|q| q.mrr),
        recall: mean(|q| q.recall),
        per_query,
        skipped,
    })
}

/// Writes runs in the six-column TREC format
/// `query_id Q0 passage_id rank score tag`.
pub fn write_trec_run(runs: &[RankedList], tag: &str, w: &mut impl Write) -> std::io::Result<()> {
    for run in runs {
        for (rank, hit) in run.hits().iter().enumerate() {
            writeln!(
                w,
                "{} Q0 {} {} {} {}",
                run.query_id(),
                hit.passage_id,
                rank + 1,
                hit.score,
                tag
            )?;
        }
    }
    Ok(())
}

/// Reads a six-column TREC run. Hits are ordered by descending score, then
/// by rank; query order follows first appearance in the file.
pub fn read_trec_run(r: impl BufRead) -> Result<Vec<RankedList>, MetricError> {
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<(f64, usize, String)>> = BTreeMap::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_err = |message: String| MetricError::Parse {
            line: line_no,
            message,
        };
        if fields.len() != 6 {
            return Err(parse_err(format!("expected 6 fields, found {}", fields.len())));
        }
        let rank: usize = fields[3]
            .parse()
            .map_err(|_| parse_err(format!("bad rank {:?}", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| parse_err(format!("bad score {:?}", fields[4])))?;
        let qid = fields[0].to_string();
        if !rows.contains_key(&qid) {
            order.push(qid.clone());
        }
        let entry = rows.entry(qid).or_default();
        if entry.iter().any(|(_, _, d)| d == fields[2]) {
            return Err(parse_err(format!("passage {} repeated for query {}", fields[2], fields[0])));
        }
        entry.push((score, rank, fields[2].to_string()));
    }
    order
        .into_iter()
        .map(|qid| {
            let mut hits = rows.remove(&qid).unwrap_or_default();
            hits.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let hits = hits
                .into_iter()
                .map(|(score, _, passage_id)| Hit { passage_id, score })
                .collect();
            Ok(RankedList::new(qid, hits)?)
        })
        .collect()
}
