use std::collections::HashMap;

use qfuse_core::metrics::{evaluate_run_with, mrr_at_k, ndcg_at_k, recall_at_k, Cutoffs, MetricError};
use qfuse_core::{Exec, Hit, QrelSet, RankedList};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook definitions, computed without sharing code with the crate.
fn reference(ranking: &[String], judged: &HashMap<String, u32>) -> (f64, f64, f64) {
    let dcg = |grades: &[u32]| -> f64 {
        grades
            .iter()
            .enumerate()
            .map(|(i, &g)| (2f64.powf(g as f64) - 1.0) / ((i as f64) + 2.0).log2())
            .sum()
    };
    let got: Vec<u32> = ranking
        .iter()
        .take(10)
        .map(|d| judged.get(d).copied().unwrap_or(0))
        .collect();
    let mut ideal: Vec<u32> = judged.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    ideal.truncate(10);
    let ndcg = dcg(&got) / dcg(&ideal);
    let mut rr = 0.0;
    for (i, d) in ranking.iter().take(100).enumerate() {
        if judged.get(d).copied().unwrap_or(0) >= 1 {
            rr = 1.0 / (i as f64 + 1.0);
            break;
        }
    }
    let relevant = judged.values().filter(|&&g| g >= 1).count() as f64;
    let found = ranking
        .iter()
        .take(100)
        .filter(|d| judged.get(*d).copied().unwrap_or(0) >= 1)
        .count() as f64;
    (ndcg, rr, found / relevant)
}

#[test]
fn metrics_match_reference_on_random_instances() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let n_passages = rng.random_range(1..=500);
        let n_queries = rng.random_range(1..=100);
        let pool: Vec<String> = (0..n_passages).map(|i| format!("d{i}")).collect();
        let mut qrels = QrelSet::new();
        let mut runs = Vec::new();
        let mut expected = Vec::new();
        for q in 0..n_queries {
            let qid = format!("q{q}");
            let mut judged = HashMap::new();
            for _ in 0..rng.random_range(0..12) {
                let d = pool[rng.random_range(0..n_passages)].clone();
                let g = rng.random_range(0..4u32);
                qrels.insert(&qid, &d, g);
                judged.insert(d, g);
            }
            let mut ranking = pool.clone();
            ranking.shuffle(&mut rng);
            ranking.truncate(rng.random_range(1..=n_passages.min(150)));
            let hits = ranking
                .iter()
                .enumerate()
                .map(|(i, d)| Hit {
                    passage_id: d.clone(),
                    score: 1.0 - i as f64 * 1e-3,
                })
                .collect();
            let list = RankedList::new(&qid, hits).unwrap();
            if judged.values().any(|&g| g >= 1) {
                let (n, m, r) = reference(&ranking, &judged);
                assert!((ndcg_at_k(&list, &qrels, 10).unwrap() - n).abs() < 1e-9);
                assert!((mrr_at_k(&list, &qrels, 100).unwrap() - m).abs() < 1e-9);
                assert!((recall_at_k(&list, &qrels, 100).unwrap() - r).abs() < 1e-9);
                expected.push((n, m, r));
            } else {
                assert!(matches!(ndcg_at_k(&list, &qrels, 10), Err(MetricError::NoRelevant(_))));
            }
            runs.push(list);
        }
        match evaluate_run_with(&runs, &qrels, Cutoffs::default(), Exec::default()) {
            Ok(report) => {
                let k = expected.len() as f64;
                let mean = |f: fn(&(f64, f64, f64)) -> f64| expected.iter().map(f).sum::<f64>() / k;
                assert_eq!(report.evaluated(), expected.len());
                assert!((report.ndcg - mean(|t| t.0)).abs() < 1e-9);
                assert!((report.mrr - mean(|t| t.1)).abs() < 1e-9);
                assert!((report.recall - mean(|t| t.2)).abs() < 1e-9);
            }
            Err(MetricError::NothingToEvaluate) => assert!(expected.is_empty()),
            Err(e) => panic!("{e}"),
        }
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}
