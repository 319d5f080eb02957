use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qfuse_core::metrics::{evaluate_run_with, Cutoffs};
use qfuse_core::rbsim::{simulate_retrieval_with, GroupModel};
use qfuse_core::{build_index, EmbeddingVector, Exec, PassageRecord, QrelSet, QueryRecord, VectorIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    EmbeddingVector::new((0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn corpus(n: usize, dim: usize) -> VectorIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let passages: Vec<PassageRecord> = (0..n)
        .map(|i| {
            PassageRecord::new(format!("d{i:06}"), "", "x")
                .unwrap()
                .with_fused(random_vec(&mut rng, dim))
        })
        .collect();
    build_index(&passages, false).unwrap()
}

fn queries(n: usize, dim: usize) -> Vec<QueryRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    (0..n)
        .map(|i| QueryRecord::new(format!("q{i}"), "q").with_embedding(random_vec(&mut rng, dim)))
        .collect()
}

fn search(c: &mut Criterion) {
    let index = corpus(100_000, 128);
    let q = &queries(1, 128)[0];
    let emb = q.embedding.as_ref().unwrap();
    let mut g = c.benchmark_group("search_100k_rows");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| index.search_with(emb, 100, exec, "q").unwrap())
        });
    }
    g.finish();
}

fn batch_search(c: &mut Criterion) {
    let index = corpus(10_000, 128);
    let qs = queries(256, 128);
    let mut g = c.benchmark_group("batch_search_256x10k");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| index.batch_search_with(&qs, 100, exec).unwrap())
        });
    }
    g.finish();
}

fn evaluate(c: &mut Criterion) {
    let index = corpus(5_000, 64);
    let qs = queries(1_000, 64);
    let runs = index.batch_search(&qs, 100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut qrels = QrelSet::new();
    for q in &qs {
        for _ in 0..5 {
            qrels.insert(&q.query_id, format!("d{:06}", rng.random_range(0..5_000)), rng.random_range(1..3));
        }
    }
    let mut g = c.benchmark_group("evaluate_1k_queries");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate_run_with(&runs, &qrels, Cutoffs::default(), exec).unwrap())
        });
    }
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let model = GroupModel::new(1_000, 16, 4, 0.6, 1.0, 0).unwrap();
    let mut g = c.benchmark_group("simulate_retrieval_1k_groups");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| simulate_retrieval_with(&model, &[0.25, 1.0], exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, search, batch_search, evaluate, simulation);
criterion_main!(benches);
