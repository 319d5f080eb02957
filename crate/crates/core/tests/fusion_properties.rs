use proptest::prelude::*;
use qfuse_core::{
    fuse, resolve_weights, EmbeddingVector, FusionSpec, FusionStrategy, QueryKind, SyntheticQuery,
};

const DIM: usize = 6;

fn vector() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f32..1.0, DIM)
}

fn query() -> impl Strategy<Value = SyntheticQuery> {
    (1e-6f64..=1.0, 0.0f64..=1.0, vector()).prop_map(|(p, s, v)| {
        SyntheticQuery::new(QueryKind::Question, "Why?", p)
            .unwrap()
            .with_bertscore(s)
            .unwrap()
            .with_embedding(EmbeddingVector::new(v).unwrap())
    })
}

fn case() -> impl Strategy<Value = (FusionSpec, Vec<SyntheticQuery>, Vec<f32>)> {
    (
        prop::sample::select(FusionStrategy::ALL.to_vec()),
        0.0f64..=1.0,
        prop::collection::vec(query(), 1..8),
        vector(),
    )
        .prop_map(|(s, w0, q, c)| (FusionSpec::new(s, w0).unwrap(), q, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6000))]

    #[test]
    fn weights_form_a_convex_combination((spec, queries, _) in case()) {
        let w = resolve_weights(&spec, &queries).unwrap();
        prop_assert!((w.total() - 1.0).abs() <= 1e-9, "{spec}: {}", w.total());
        prop_assert!(w.w_corpus >= 0.0);
        prop_assert!(w.per_query.iter().all(|&(_, x)| x >= 0.0));
    }

    #[test]
    fn identical_inputs_are_a_fixed_point((spec, queries, c) in case()) {
        let v = EmbeddingVector::new(c.clone()).unwrap();
        let same: Vec<SyntheticQuery> = queries
            .into_iter()
            .map(|q| q.with_embedding(v.clone()))
            .collect();
        let w = resolve_weights(&spec, &same).unwrap();
        let out = fuse(&v, &same, &w).unwrap();
        for (a, b) in out.values().iter().zip(&c) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn manual_w0_one_is_corpus_only((_, queries, c) in case()) {
        let v = EmbeddingVector::new(c).unwrap();
        let manual = resolve_weights(&FusionSpec::manual(1.0).unwrap(), &queries).unwrap();
        let only = resolve_weights(&FusionSpec::corpus_only(), &queries).unwrap();
        prop_assert_eq!(fuse(&v, &queries, &manual).unwrap(), v.clone());
        prop_assert_eq!(fuse(&v, &queries, &only).unwrap(), v);
    }
}

#[test]
fn bertscore_hand_values() {
    let qs: Vec<SyntheticQuery> = [0.6, 0.4]
        .iter()
        .map(|&s| {
            SyntheticQuery::new(QueryKind::Keywords, "a, b", 0.5)
                .unwrap()
                .with_bertscore(s)
                .unwrap()
        })
        .collect();
    let w = resolve_weights(&FusionSpec::new(FusionStrategy::Bertscore, 0.6).unwrap(), &qs).unwrap();
    assert!((w.w_corpus - 0.5).abs() < 1e-12);
    let q = w.query_weights();
    assert!((q[0] - 0.3).abs() < 1e-12);
    assert!((q[1] - 0.2).abs() < 1e-12);
}
