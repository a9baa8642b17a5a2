mod common;

use std::path::PathBuf;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topicview_core::corpus::{build_vocabulary, Vocabulary};
use topicview_core::embeddings::{
    cosine, load_embeddings, pair_loss, pair_loss_gradient, save_embeddings, train_sgns,
    EmbeddingMatrix, SgnsConfig,
};

use common::NO_FILTERS;

/// "calm" and "relaxed" co-occur in documents built from one context pool;
/// "angry" appears only in documents built from another.
fn planted_pair_corpus() -> (Vocabulary, Vec<Vec<usize>>) {
    let soothing = ["breathe", "quiet", "peace", "gentle", "slow", "rest"];
    let hostile = ["shout", "fight", "slam", "yell", "blame", "storm"];
    let filler = ["day", "time", "work", "home"];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut docs: Vec<Vec<String>> = Vec::new();
    for n in 0..200 {
        let (pool, planted): (&[&str], &[&str]) = if n % 2 == 0 {
            (&soothing, &["calm", "relaxed"])
        } else {
            (&hostile, &["angry", "furious"])
        };
        let mut doc: Vec<String> = (0..12)
            .map(|i| {
                if i % 3 == 2 {
                    filler[rng.random_range(0..filler.len())]
                } else {
                    pool[rng.random_range(0..pool.len())]
                }
                .to_owned()
            })
            .collect();
        let at = rng.random_range(0..doc.len());
        doc.splice(at..at, planted.iter().map(|s| s.to_string()));
        docs.push(doc);
    }
    let vocab = build_vocabulary(&docs, NO_FILTERS).unwrap();
    let ids = docs.iter().map(|d| vocab.encode(d)).collect();
    (vocab, ids)
}

fn config() -> SgnsConfig {
    SgnsConfig {
        dim: 24,
        epochs: 8,
        seed: 42,
        ..SgnsConfig::default()
    }
}

#[test]
fn planted_pair_ranks_above_non_cooccurring_pair() {
    let (vocab, ids) = planted_pair_corpus();
    let out = train_sgns(&ids, &vocab, &config()).unwrap();
    let m = &out.embeddings;
    let row = |t: &str| m.row(vocab.id(t).unwrap());
    let together = cosine(row("calm"), row("relaxed")).unwrap();
    let apart = cosine(row("calm"), row("angry")).unwrap();
    assert!(together > apart, "{together} vs {apart}");
    assert_eq!(m.len(), vocab.len());
    assert_eq!(m.tokens(), vocab.tokens());
}

#[test]
fn loss_is_finite_and_decreases() {
    let (vocab, ids) = planted_pair_corpus();
    let out = train_sgns(&ids, &vocab, &config()).unwrap();
    assert_eq!(out.epoch_losses.len(), 8);
    assert!(out.epoch_losses.iter().all(|l| l.is_finite()));
    assert!(out.epoch_losses.last().unwrap() < out.epoch_losses.first().unwrap());
    assert!(out.deterministic);
}

#[test]
fn deterministic_mode_is_bit_identical() {
    let (vocab, ids) = planted_pair_corpus();
    let a = train_sgns(&ids, &vocab, &config()).unwrap().embeddings;
    let b = train_sgns(&ids, &vocab, &config()).unwrap().embeddings;
    let (mut fa, mut fb) = (Vec::new(), Vec::new());
    a.write_to(&mut fa).unwrap();
    b.write_to(&mut fb).unwrap();
    assert_eq!(fa, fb);
    assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn fast_mode_trains_and_reports_nondeterminism() {
    let (vocab, ids) = planted_pair_corpus();
    let cfg = SgnsConfig {
        deterministic: false,
        threads: 4,
        ..config()
    };
    let out = train_sgns(&ids, &vocab, &cfg).unwrap();
    assert!(!out.deterministic);
    assert!(out.embeddings.as_slice().iter().all(|x| x.is_finite()));
    assert!(out.epoch_losses.last().unwrap() < out.epoch_losses.first().unwrap());
}

#[test]
fn negative_sampling_gradient_matches_finite_differences() {
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let d = rng.random_range(2..=8);
        let negs = rng.random_range(1..=5);
        let mut vecs: Vec<Vec<f64>> = (0..negs + 2)
            .map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let loss = |v: &[Vec<f64>]| {
            let n: Vec<&[f64]> = v[2..].iter().map(Vec::as_slice).collect();
            pair_loss(&v[0], &v[1], &n)
        };
        let n: Vec<&[f64]> = vecs[2..].iter().map(Vec::as_slice).collect();
        let g = pair_loss_gradient(&vecs[0], &vecs[1], &n);
        let mut analytic = vec![g.center, g.context];
        analytic.extend(g.negatives);
        for i in 0..vecs.len() {
            for j in 0..d {
                let orig = vecs[i][j];
                vecs[i][j] = orig + h;
                let up = loss(&vecs);
                vecs[i][j] = orig - h;
                let down = loss(&vecs);
                vecs[i][j] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[i][j];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(rel < 1e-4, "vector {i} dim {j}: {a} vs {numeric}");
            }
        }
    }
}

#[test]
fn external_fixture_loads_with_header_shape() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/external_vectors.txt");
    let m = load_embeddings(&path).unwrap();
    assert_eq!((m.len(), m.dim()), (4, 5));
    assert_eq!(m.tokens()[3], "10");
    assert_eq!(m.row(3)[0], 1.2e-5);
    let calm = m.row(0);
    assert!(cosine(calm, m.row(1)).unwrap() > cosine(calm, m.row(2)).unwrap());
}

#[test]
fn file_round_trip_within_precision() {
    let m = EmbeddingMatrix::new(
        vec!["x".into(), "y".into(), "z".into()],
        2,
        vec![0.1234567891, -9.87654321, 1e-9, 123.456789, -0.5, 3.0],
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.txt");
    save_embeddings(&m, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("3 2\nx "));
    let back = load_embeddings(&path).unwrap();
    for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
        assert!((a - b).abs() < 1e-8);
    }
}

fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-100.0f64..100.0, d)
}

proptest! {
    #[test]
    fn cosine_is_symmetric(a in vec_strategy(6), b in vec_strategy(6)) {
        prop_assert!((cosine(&a, &b).unwrap() - cosine(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn cosine_is_positive_scale_invariant(a in vec_strategy(5), b in vec_strategy(5), c in 1e-3f64..1e3) {
        let scaled: Vec<f64> = b.iter().map(|x| x * c).collect();
        prop_assert!((cosine(&a, &scaled).unwrap() - cosine(&a, &b).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn cosine_is_bounded(a in vec_strategy(4), b in vec_strategy(4)) {
        let c = cosine(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
    }
}
