use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topicview_core::corpus::{
    build_vocabulary, load_transcripts, parse_transcripts, save_transcripts, to_bow, tokenize,
    write_transcripts, CorpusError, Session, Speaker, Turn, VocabFilters, Vocabulary,
};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// 20 documents over a skewed pool of 30 words.
fn twenty_docs() -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..20)
        .map(|_| {
            let len = rng.random_range(5..40);
            (0..len)
                .map(|_| {
                    // squaring skews towards low indices
                    let u: f64 = rng.random();
                    format!("word{}", (u * u * 30.0) as usize)
                })
                .collect()
        })
        .collect()
}

/// Brute-force count-and-filter: linear scans, no hashing.
fn oracle_vocab(docs: &[Vec<String>], min_count: u64, max_ratio: f64) -> Vec<(String, u64, u64)> {
    let mut words: Vec<String> = Vec::new();
    for d in docs {
        for w in d {
            if !words.contains(w) {
                words.push(w.clone());
            }
        }
    }
    let mut kept = Vec::new();
    for w in words {
        let count = docs.iter().flatten().filter(|x| **x == w).count() as u64;
        let df = docs.iter().filter(|d| d.contains(&w)).count() as u64;
        if count >= min_count && df as f64 / docs.len() as f64 <= max_ratio {
            kept.push((w, count, df));
        }
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    kept
}

fn vocab_rows(v: &Vocabulary) -> Vec<(String, u64, u64)> {
    (0..v.len())
        .map(|i| (v.token(i).unwrap().to_owned(), v.count(i), v.doc_frequency(i)))
        .collect()
}

#[test]
fn vocabulary_matches_brute_force_oracle() {
    let docs = twenty_docs();
    for (min_count, ratio) in [(3, 0.3), (1, 1.0), (5, 0.5), (2, 0.75)] {
        let filters = VocabFilters {
            min_count,
            max_doc_ratio: ratio,
        };
        let expected = oracle_vocab(&docs, min_count, ratio);
        match build_vocabulary(&docs, filters) {
            Ok(v) => {
                assert_eq!(vocab_rows(&v), expected, "filters {filters:?}");
                for i in 0..v.len() {
                    assert!(v.count(i) >= min_count);
                    assert!(v.doc_frequency(i) as f64 / v.total_docs() as f64 <= ratio);
                    assert_eq!(v.id(v.token(i).unwrap()), Some(i));
                }
            }
            Err(CorpusError::AllTokensFiltered) => assert!(expected.is_empty()),
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn default_filters_drop_ubiquitous_tokens() {
    let docs = twenty_docs();
    let vocab = build_vocabulary(&docs, VocabFilters::default()).unwrap();
    // word0 is the most frequent pool word and appears almost everywhere
    assert!(vocab.id("word0").is_none());
    assert!(!vocab.is_empty());
}

#[test]
fn bow_matches_counting_oracle() {
    let docs = twenty_docs();
    let vocab = build_vocabulary(&docs, VocabFilters::default()).unwrap();
    for doc in &docs {
        let mut expected: BTreeMap<usize, u32> = BTreeMap::new();
        for w in doc {
            if let Some(id) = vocab.tokens().iter().position(|t| t == w) {
                *expected.entry(id).or_default() += 1;
            }
        }
        let bow = to_bow(doc, &vocab);
        assert_eq!(bow.entries(), expected.into_iter().collect::<Vec<_>>().as_slice());
        assert!(bow.entries().windows(2).all(|w| w[0].0 < w[1].0));
    }
}

#[test]
fn vocabulary_file_round_trip() {
    let docs = twenty_docs();
    let vocab = build_vocabulary(&docs, VocabFilters::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.txt");
    vocab.save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        format!("{} {}", vocab.len(), vocab.total_docs())
    );
    let back = Vocabulary::load(&path).unwrap();
    assert_eq!(vocab_rows(&back), vocab_rows(&vocab));
    assert_eq!(back.hash(), vocab.hash());
    assert_eq!(back.filters(), None);
}

#[test]
fn three_session_fixture_matches_line_counts() {
    let path = fixture("three_sessions.jsonl");
    let sessions = load_transcripts(&path).unwrap();

    let raw = std::fs::read_to_string(&path).unwrap();
    let mut oracle: Vec<(String, usize)> = Vec::new();
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        let value: serde_json::Value = serde_json::from_str(line).unwrap();
        let id = value["session_id"].as_str().unwrap().to_owned();
        match oracle.iter_mut().find(|(s, _)| *s == id) {
            Some(entry) => entry.1 += 1,
            None => oracle.push((id, 1)),
        }
    }
    let got: Vec<(String, usize)> = sessions
        .iter()
        .map(|s| (s.session_id().to_owned(), s.len()))
        .collect();
    assert_eq!(got, oracle);
    assert_eq!(sessions.len(), 3);

    for s in &sessions {
        for (i, t) in s.turns().iter().enumerate() {
            assert_eq!(t.turn_index, i);
            assert_eq!(t.session_id, s.session_id());
        }
    }
    assert_eq!(sessions[0].condition_tag(), Some("anxiety"));
    assert_eq!(sessions[1].condition_tag(), Some("depression"));
    assert_eq!(sessions[2].condition_tag(), None);
    assert_eq!(sessions[1].turns()[2].text, "");
}

#[test]
fn duplicate_turn_index_names_the_session() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dup.jsonl");
    std::fs::write(
        &path,
        "{\"session_id\":\"ok\",\"turn_index\":0,\"speaker\":\"patient\",\"text\":\"a\"}\n\
         {\"session_id\":\"bad-7\",\"turn_index\":0,\"speaker\":\"patient\",\"text\":\"a\"}\n\
         {\"session_id\":\"bad-7\",\"turn_index\":0,\"speaker\":\"therapist\",\"text\":\"b\"}\n",
    )
    .unwrap();
    match load_transcripts(&path) {
        Err(e @ CorpusError::Invariant { .. }) => assert!(e.to_string().contains("bad-7")),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        load_transcripts(dir.path().join("missing.jsonl")),
        Err(CorpusError::Io { .. })
    ));
}

#[test]
fn save_then_load_is_identity_on_fixture() {
    let sessions = load_transcripts(fixture("three_sessions.jsonl")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.jsonl");
    save_transcripts(&sessions, &path).unwrap();
    assert_eq!(load_transcripts(&path).unwrap(), sessions);
}

fn arb_session() -> impl Strategy<Value = Session> {
    (
        "[a-z0-9-]{1,8}",
        proptest::option::of("[a-z]{3,10}"),
        proptest::collection::vec(
            (any::<bool>(), "\\PC{0,40}", proptest::option::of(0.0f64..1e4)),
            1..6,
        ),
    )
        .prop_map(|(id, tag, turns)| {
            let turns = turns
                .into_iter()
                .enumerate()
                .map(|(i, (p, text, ts))| Turn {
                    session_id: id.clone(),
                    turn_index: i,
                    speaker: if p { Speaker::Patient } else { Speaker::Therapist },
                    text,
                    timestamp: ts,
                })
                .collect();
            Session::new(id, tag, turns).unwrap()
        })
}

proptest! {
    #[test]
    fn transcript_round_trip(sessions in proptest::collection::vec(arb_session(), 1..4)) {
        // distinct ids so the groups do not merge
        let mut seen = HashSet::new();
        let sessions: Vec<Session> = sessions
            .into_iter()
            .filter(|s| seen.insert(s.session_id().to_owned()))
            .collect();
        let mut buf = Vec::new();
        write_transcripts(&sessions, &mut buf).unwrap();
        prop_assert_eq!(parse_transcripts(buf.as_slice()).unwrap(), sessions);
    }

    #[test]
    fn tokenize_is_idempotent(text in "\\PC{0,80}") {
        let once = tokenize(&text);
        prop_assert_eq!(tokenize(&once.join(" ")), once.clone());
        prop_assert_eq!(tokenize(&text), once);
    }

    #[test]
    fn bow_keeps_every_in_vocab_token(text in "[a-f ]{0,120}") {
        let docs = vec![tokenize("aa bb cc dd ee ff ab cd")];
        let vocab = build_vocabulary(&docs, VocabFilters { min_count: 1, max_doc_ratio: 1.0 }).unwrap();
        let tokens = tokenize(&text);
        let in_vocab = tokens.iter().filter(|t| vocab.id(t).is_some()).count() as u64;
        prop_assert_eq!(to_bow(&tokens, &vocab).total(), in_vocab);
    }
}
