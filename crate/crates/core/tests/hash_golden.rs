use std::path::PathBuf;

use qfuse_core::provider::{Embedder, HashEmbedder};
use serde::{Deserialize, Serialize};

const DIM: usize = 64;
const SEED: u64 = 42;
const TEXTS: [&str; 10] = [
    "a",
    "b",
    "The quick brown fox jumps over the lazy dog.",
    "What is the purpose of the ESC?",
    "statin, cholesterol, cardiovascular risk",
    "Übergrößenträger in München",
    "日本語のテキスト",
    "  leading and trailing spaces  ",
    "0123456789",
    "Dr. Smith ran. He won.",
];

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Entry {
    text: String,
    first4: [f32; 4],
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/hash_golden.json")
}

fn compute() -> Vec<Entry> {
    let h = HashEmbedder::new(DIM, SEED).unwrap();
    TEXTS
        .iter()
        .map(|t| {
            let v = h.embed(t).unwrap();
            let x = v.values();
            Entry {
                text: t.to_string(),
                first4: [x[0], x[1], x[2], x[3]],
            }
        })
        .collect()
}

#[test]
fn hash_embedder_matches_golden() {
    let got = compute();
    if std::env::var_os("QFUSE_REGEN_GOLDEN").is_some() {
        let mut s = serde_json::to_string_pretty(&got).unwrap();
        s.push('\n');
        std::fs::write(golden_path(), s).unwrap();
    }
    let want: Vec<Entry> =
        serde_json::from_str(&std::fs::read_to_string(golden_path()).unwrap()).unwrap();
    assert_eq!(want.len(), 10);
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g.text, w.text);
        for (a, b) in g.first4.iter().zip(&w.first4) {
            assert_eq!(a.to_bits(), b.to_bits(), "{}", g.text);
        }
    }
}
