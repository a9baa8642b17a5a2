//! Planted-topic fixtures: sessions whose words come from disjoint word
//! groups, so the "right" topics are known in advance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Session, Speaker, Turn};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub groups: usize,
    pub words_per_group: usize,
    pub sessions_per_group: usize,
    pub turns_per_session: usize,
    pub words_per_turn: usize,
    pub seed: u64,
}

impl Default for PlantedSpec {
    /// Two groups, 40 sessions in total.
    fn default() -> Self {
        PlantedSpec {
            groups: 2,
            words_per_group: 12,
            sessions_per_group: 20,
            turns_per_session: 6,
            words_per_turn: 8,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    /// Word list of each planted group.
    pub groups: Vec<Vec<String>>,
    pub sessions: Vec<Session>,
    /// Group that generated each session.
    pub session_group: Vec<usize>,
}

/// Name of word `i` of group `g`.
pub fn planted_word(g: usize, i: usize) -> String {
    format!("g{g}w{i:02}")
}

/// Sessions alternate groups (`0, 1, ..., 0, 1, ...`); every word of a
/// session is drawn uniformly from its group.
pub fn planted_corpus(spec: &PlantedSpec) -> PlantedCorpus {
    let groups: Vec<Vec<String>> = (0..spec.groups)
        .map(|g| (0..spec.words_per_group).map(|i| planted_word(g, i)).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sessions = Vec::new();
    let mut session_group = Vec::new();
    for n in 0..spec.sessions_per_group * spec.groups {
        let g = n % spec.groups;
        let id = format!("planted-{n:03}");
        let turns = (0..spec.turns_per_session)
            .map(|t| Turn {
                session_id: id.clone(),
                turn_index: t,
                speaker: speaker_at(t),
                text: random_text(&groups[g], spec.words_per_turn, &mut rng),
                timestamp: None,
            })
            .collect();
        sessions.push(
            Session::new(id, Some(format!("group{g}")), turns).expect("generated turns are valid"),
        );
        session_group.push(g);
    }
    PlantedCorpus {
        groups,
        sessions,
        session_group,
    }
}

/// A session drawing its first `half` turns from group `first` and the
/// next `half` from group `second`.
pub fn two_phase_session(
    corpus: &PlantedCorpus,
    session_id: &str,
    first: usize,
    second: usize,
    half: usize,
    words_per_turn: usize,
    seed: u64,
) -> Session {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let turns = (0..2 * half)
        .map(|t| {
            let g = if t < half { first } else { second };
            Turn {
                session_id: session_id.to_owned(),
                turn_index: t,
                speaker: speaker_at(t),
                text: random_text(&corpus.groups[g], words_per_turn, &mut rng),
                timestamp: Some(t as f64 * 10.0),
            }
        })
        .collect();
    Session::new(session_id, None, turns).expect("generated turns are valid")
}

fn speaker_at(t: usize) -> Speaker {
    if t % 2 == 0 {
        Speaker::Patient
    } else {
        Speaker::Therapist
    }
}

fn random_text(words: &[String], n: usize, rng: &mut impl Rng) -> String {
    (0..n)
        .map(|_| words[rng.random_range(0..words.len())].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Share of a topic's top words that belong to its best-matching group.
pub fn purity(top_words: &[String], groups: &[Vec<String>]) -> (usize, f64) {
    let (best, hits) = groups
        .iter()
        .enumerate()
        .map(|(g, words)| (g, top_words.iter().filter(|w| words.contains(w)).count()))
        .max_by_key(|&(g, hits)| (hits, std::cmp::Reverse(g)))
        .unwrap_or((0, 0));
    (best, hits as f64 / top_words.len().max(1) as f64)
}
