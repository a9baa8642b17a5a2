//! Transcript ingestion, tokenization, vocabulary construction and
//! bag-of-words encoding.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_MIN_COUNT: u64 = 3;
pub const DEFAULT_MAX_DOC_RATIO: f64 = 0.3;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invariant violated in session {session_id}: {message}")]
    Invariant { session_id: String, message: String },
    #[error("every token was removed by the vocabulary filters")]
    AllTokensFiltered,
    #[error("invalid vocabulary configuration: {0}")]
    InvalidConfig(String),
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Patient,
    Therapist,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::Patient => "patient",
            Speaker::Therapist => "therapist",
        })
    }
}

/// One utterance by one speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub session_id: String,
    pub turn_index: usize,
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<f64>,
}

/// An ordered, validated list of turns sharing one session id.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    session_id: String,
    condition_tag: Option<String>,
    turns: Vec<Turn>,
}

impl Session {
    /// Builds a session, sorting turns by index and checking that the
    /// indices are unique and contiguous from zero.
    pub fn new(
        session_id: impl Into<String>,
        condition_tag: Option<String>,
        mut turns: Vec<Turn>,
    ) -> Result<Self> {
        let session_id = session_id.into();
        let invariant = |message: String| CorpusError::Invariant {
            session_id: session_id.clone(),
            message,
        };
        if turns.is_empty() {
            return Err(invariant("session has no turns".into()));
        }
        if let Some(t) = turns.iter().find(|t| t.session_id != session_id) {
            return Err(invariant(format!(
                "turn {} belongs to session {}",
                t.turn_index, t.session_id
            )));
        }
        turns.sort_by_key(|t| t.turn_index);
        for (expected, turn) in turns.iter().enumerate() {
            if turn.turn_index < expected {
                return Err(invariant(format!(
                    "duplicate turn_index {}",
                    turn.turn_index
                )));
            }
            if turn.turn_index > expected {
                return Err(invariant(format!("missing turn_index {expected}")));
            }
        }
        Ok(Session {
            session_id,
            condition_tag,
            turns,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn condition_tag(&self) -> Option<&str> {
        self.condition_tag.as_deref()
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Full session text: turn texts joined by a newline.
    pub fn text(&self) -> String {
        self.turns
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Lowercases and splits on non-alphanumeric boundaries. Single-character
/// tokens are dropped; digit runs are kept.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|tok| tok.chars().nth(1).is_some())
        .map(str::to_owned)
        .collect()
}

/// Hex SHA-256 of the token list in id order. Used to check that vocabulary,
/// embeddings and topic model artifacts belong together.
pub fn vocab_hash<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut hasher = Sha256::new();
    for tok in tokens {
        hasher.update(tok.as_ref().as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Filter settings a vocabulary was built with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocabFilters {
    pub min_count: u64,
    pub max_doc_ratio: f64,
}

impl Default for VocabFilters {
    fn default() -> Self {
        VocabFilters {
            min_count: DEFAULT_MIN_COUNT,
            max_doc_ratio: DEFAULT_MAX_DOC_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
    counts: Vec<u64>,
    doc_frequency: Vec<u64>,
    total_docs: u64,
    /// `None` when the vocabulary was read back from a file.
    filters: Option<VocabFilters>,
}

/// Builds a vocabulary keeping tokens with corpus count `>= min_count` and
/// document ratio `<= max_doc_ratio`. Ids follow descending corpus count,
/// ties broken lexicographically.
pub fn build_vocabulary<S: AsRef<str>>(
    documents: &[Vec<S>],
    filters: VocabFilters,
) -> Result<Vocabulary> {
    if documents.is_empty() {
        return Err(CorpusError::InvalidConfig("no documents".into()));
    }
    if filters.min_count < 1 {
        return Err(CorpusError::InvalidConfig("min_count must be >= 1".into()));
    }
    if !(filters.max_doc_ratio > 0.0 && filters.max_doc_ratio <= 1.0) {
        return Err(CorpusError::InvalidConfig(format!(
            "max_doc_ratio must lie in (0, 1], got {}",
            filters.max_doc_ratio
        )));
    }

    let mut stats: HashMap<&str, (u64, u64)> = HashMap::new();
    for doc in documents {
        let mut seen = HashSet::new();
        for tok in doc {
            let tok = tok.as_ref();
            let entry = stats.entry(tok).or_default();
            entry.0 += 1;
            if seen.insert(tok) {
                entry.1 += 1;
            }
        }
    }

    let total_docs = documents.len() as u64;
    let mut kept: Vec<(&str, u64, u64)> = stats
        .into_iter()
        .filter(|&(_, (count, df))| {
            count >= filters.min_count
                && df as f64 / total_docs as f64 <= filters.max_doc_ratio
        })
        .map(|(tok, (count, df))| (tok, count, df))
        .collect();
    if kept.is_empty() {
        return Err(CorpusError::AllTokensFiltered);
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut vocab = Vocabulary::from_parts(
        kept.iter().map(|k| k.0.to_owned()).collect(),
        kept.iter().map(|k| k.1).collect(),
        kept.iter().map(|k| k.2).collect(),
        total_docs,
    );
    vocab.filters = Some(filters);
    Ok(vocab)
}

impl Vocabulary {
    fn from_parts(
        tokens: Vec<String>,
        counts: Vec<u64>,
        doc_frequency: Vec<u64>,
        total_docs: u64,
    ) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens,
            ids,
            counts,
            doc_frequency,
            total_docs,
            filters: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn doc_frequency(&self, id: usize) -> u64 {
        self.doc_frequency[id]
    }

    pub fn total_docs(&self) -> u64 {
        self.total_docs
    }

    pub fn filters(&self) -> Option<VocabFilters> {
        self.filters
    }

    pub fn hash(&self) -> String {
        vocab_hash(&self.tokens)
    }

    /// Maps tokens to ids, dropping out-of-vocabulary tokens.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().filter_map(|t| self.id(t.as_ref())).collect()
    }

    /// Writes `V total_docs`, then `token count doc_frequency` per id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
        let mut out = BufWriter::new(file);
        let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(out, "{} {}", self.len(), self.total_docs)?;
            for id in 0..self.len() {
                writeln!(
                    out,
                    "{} {} {}",
                    self.tokens[id], self.counts[id], self.doc_frequency[id]
                )?;
            }
            out.flush()
        };
        write(&mut out).map_err(|e| CorpusError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let parse_err = |line: usize, message: String| CorpusError::Parse { line, message };

        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?
            .map_err(|e| CorpusError::io(path, e))?;
        let (size, total_docs) = match header.split_whitespace().collect::<Vec<_>>()[..] {
            [v, d] => (
                v.parse::<usize>()
                    .map_err(|e| parse_err(1, format!("bad size: {e}")))?,
                d.parse::<u64>()
                    .map_err(|e| parse_err(1, format!("bad total_docs: {e}")))?,
            ),
            _ => return Err(parse_err(1, "expected `V total_docs`".into())),
        };

        let mut tokens = Vec::with_capacity(size);
        let mut counts = Vec::with_capacity(size);
        let mut dfs = Vec::with_capacity(size);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line.map_err(|e| CorpusError::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(' ').collect();
            let [tok, count, df] = fields[..] else {
                return Err(parse_err(lineno, "expected `token count doc_frequency`".into()));
            };
            tokens.push(tok.to_owned());
            counts.push(
                count
                    .parse()
                    .map_err(|e| parse_err(lineno, format!("bad count: {e}")))?,
            );
            dfs.push(
                df.parse()
                    .map_err(|e| parse_err(lineno, format!("bad doc_frequency: {e}")))?,
            );
        }
        if tokens.len() != size {
            return Err(parse_err(
                tokens.len() + 2,
                format!("header declares {size} tokens, found {}", tokens.len()),
            ));
        }
        let vocab = Vocabulary::from_parts(tokens, counts, dfs, total_docs);
        if vocab.ids.len() != vocab.tokens.len() {
            return Err(parse_err(1, "duplicate tokens".into()));
        }
        Ok(vocab)
    }
}

/// Sparse bag of words: `(token_id, count)` with strictly increasing ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BowVector {
    entries: Vec<(usize, u32)>,
}

impl BowVector {
    /// Aggregates raw token ids into a bag of words.
    pub fn from_ids(ids: impl IntoIterator<Item = usize>) -> Self {
        let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
        for id in ids {
            *counts.entry(id).or_default() += 1;
        }
        BowVector {
            entries: counts.into_iter().collect(),
        }
    }

    pub fn entries(&self) -> &[(usize, u32)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| c as u64).sum()
    }
}

/// Encodes one document, silently dropping out-of-vocabulary tokens.
pub fn to_bow<S: AsRef<str>>(document: &[S], vocab: &Vocabulary) -> BowVector {
    BowVector::from_ids(document.iter().filter_map(|t| vocab.id(t.as_ref())))
}

/// What counts as one training document.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocumentUnit {
    #[default]
    Session,
    Turn,
}

/// Tokenizes sessions into training documents, removing any `stopwords`.
pub fn session_documents(
    sessions: &[Session],
    unit: DocumentUnit,
    stopwords: &HashSet<String>,
) -> Vec<Vec<String>> {
    let clean = |text: &str| -> Vec<String> {
        tokenize(text)
            .into_iter()
            .filter(|t| !stopwords.contains(t))
            .collect()
    };
    match unit {
        DocumentUnit::Session => sessions
            .iter()
            .map(|s| s.turns.iter().flat_map(|t| clean(&t.text)).collect())
            .collect(),
        DocumentUnit::Turn => sessions
            .iter()
            .flat_map(|s| s.turns.iter().map(|t| clean(&t.text)))
            .collect(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TurnRecord {
    session_id: String,
    turn_index: usize,
    speaker: Speaker,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timestamp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    condition_tag: Option<String>,
}

/// Reads a JSONL transcript file (one turn per line) into sessions, in order
/// of first appearance.
pub fn load_transcripts(path: impl AsRef<Path>) -> Result<Vec<Session>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    parse_transcripts(BufReader::new(file)).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::io(path, source),
        other => other,
    })
}

pub fn parse_transcripts(reader: impl BufRead) -> Result<Vec<Session>> {
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, (Option<String>, Vec<Turn>)> = HashMap::new();

    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: "<reader>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TurnRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let entry = grouped.entry(rec.session_id.clone()).or_insert_with(|| {
            order.push(rec.session_id.clone());
            (None, Vec::new())
        });
        if let Some(tag) = rec.condition_tag {
            match &entry.0 {
                Some(existing) if *existing != tag => {
                    return Err(CorpusError::Invariant {
                        session_id: rec.session_id,
                        message: format!("conflicting condition tags {existing} and {tag}"),
                    })
                }
                _ => entry.0 = Some(tag),
            }
        }
        entry.1.push(Turn {
            session_id: rec.session_id,
            turn_index: rec.turn_index,
            speaker: rec.speaker,
            text: rec.text,
            timestamp: rec.timestamp,
        });
    }

    order
        .into_iter()
        .map(|id| {
            let (tag, turns) = grouped.remove(&id).unwrap_or_default();
            Session::new(id, tag, turns)
        })
        .collect()
}

pub fn save_transcripts(sessions: &[Session], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_transcripts(sessions, &mut out).map_err(|e| CorpusError::io(path, e))
}

pub fn write_transcripts(sessions: &[Session], out: &mut impl Write) -> std::io::Result<()> {
    for session in sessions {
        for turn in &session.turns {
            let rec = TurnRecord {
                session_id: turn.session_id.clone(),
                turn_index: turn.turn_index,
                speaker: turn.speaker,
                text: turn.text.clone(),
                timestamp: turn.timestamp,
                condition_tag: session.condition_tag.clone(),
            };
            serde_json::to_writer(&mut *out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(session: &str, idx: usize, speaker: Speaker, text: &str) -> Turn {
        Turn {
            session_id: session.into(),
            turn_index: idx,
            speaker,
            text: text.into(),
            timestamp: None,
        }
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("I feel anxious."), vec!["feel", "anxious"]);
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("Count 10 sheep, 10 times"),
            vec!["count", "10", "sheep", "10", "times"]
        );
    }

    #[test]
    fn tokenize_is_unicode_aware() {
        assert_eq!(tokenize("Ärger—über café"), vec!["ärger", "über", "café"]);
    }

    #[test]
    fn vocabulary_applies_both_filters() {
        let mut docs: Vec<Vec<&str>> = (0..10).map(|_| vec!["uh"]).collect();
        docs[0].extend(["mother", "mother"]);
        docs[1].push("mother");
        let vocab = build_vocabulary(&docs, VocabFilters::default()).unwrap();
        assert_eq!(vocab.tokens(), ["mother"]);
        assert_eq!(vocab.count(0), 3);
        assert_eq!(vocab.doc_frequency(0), 2);
    }

    #[test]
    fn vocabulary_with_disabled_filters_keeps_all_tokens() {
        let docs = vec![vec!["b", "a", "b"], vec!["c"]];
        let vocab = build_vocabulary(
            &docs,
            VocabFilters {
                min_count: 1,
                max_doc_ratio: 1.0,
            },
        )
        .unwrap();
        // frequency descending, ties lexicographic
        assert_eq!(vocab.tokens(), ["b", "a", "c"]);
    }

    #[test]
    fn vocabulary_rejects_degenerate_input() {
        let docs = vec![vec!["a"]];
        assert!(matches!(
            build_vocabulary(&docs, VocabFilters::default()),
            Err(CorpusError::AllTokensFiltered)
        ));
        let bad = VocabFilters {
            min_count: 1,
            max_doc_ratio: 0.0,
        };
        assert!(matches!(
            build_vocabulary(&docs, bad),
            Err(CorpusError::InvalidConfig(_))
        ));
        let empty: Vec<Vec<&str>> = vec![];
        assert!(build_vocabulary(&empty, VocabFilters::default()).is_err());
    }

    #[test]
    fn bow_counts_and_drops_oov() {
        let docs = vec![vec!["a", "a", "b"]];
        let vocab = build_vocabulary(
            &docs,
            VocabFilters {
                min_count: 1,
                max_doc_ratio: 1.0,
            },
        )
        .unwrap();
        assert_eq!(to_bow(&["a", "b", "a"], &vocab).entries(), &[(0, 2), (1, 1)]);
        assert!(to_bow(&["zzz"], &vocab).is_empty());
    }

    #[test]
    fn session_rejects_duplicate_and_missing_indices() {
        let dup = vec![
            turn("s1", 0, Speaker::Patient, "a"),
            turn("s1", 0, Speaker::Therapist, "b"),
        ];
        match Session::new("s1", None, dup) {
            Err(CorpusError::Invariant { session_id, message }) => {
                assert_eq!(session_id, "s1");
                assert!(message.contains("duplicate"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let gap = vec![
            turn("s1", 0, Speaker::Patient, "a"),
            turn("s1", 2, Speaker::Therapist, "b"),
        ];
        assert!(matches!(
            Session::new("s1", None, gap),
            Err(CorpusError::Invariant { .. })
        ));
        assert!(Session::new("s1", None, vec![]).is_err());
    }

    #[test]
    fn parse_two_line_session() {
        let data = r#"{"session_id":"a","turn_index":1,"speaker":"therapist","text":"hello there"}
{"session_id":"a","turn_index":0,"speaker":"patient","text":"hi","timestamp":1.5}
"#;
        let sessions = parse_transcripts(data.as_bytes()).unwrap();
        assert_eq!(sessions.len(), 1);
        assert_eq!(sessions[0].len(), 2);
        assert_eq!(sessions[0].turns()[0].timestamp, Some(1.5));
        assert_eq!(sessions[0].turns()[1].speaker, Speaker::Therapist);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let data = "{\"session_id\":\"a\",\"turn_index\":0,\"speaker\":\"patient\",\"text\":\"x\"}\nnot json\n";
        match parse_transcripts(data.as_bytes()) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let bad_speaker = r#"{"session_id":"a","turn_index":0,"speaker":"nurse","text":"x"}"#;
        assert!(matches!(
            parse_transcripts(bad_speaker.as_bytes()),
            Err(CorpusError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn per_turn_documents() {
        let s = Session::new(
            "s",
            None,
            vec![
                turn("s", 0, Speaker::Patient, "the sky is blue"),
                turn("s", 1, Speaker::Therapist, "the sea"),
            ],
        )
        .unwrap();
        let stop: HashSet<String> = ["the".to_string()].into();
        let per_turn = session_documents(std::slice::from_ref(&s), DocumentUnit::Turn, &stop);
        assert_eq!(per_turn, vec![vec!["sky", "is", "blue"], vec!["sea"]]);
        let per_session =
            session_documents(std::slice::from_ref(&s), DocumentUnit::Session, &HashSet::new());
        assert_eq!(per_session[0].len(), 6);
    }
}
