//! Per-turn topic scores.
//!
//! Every turn and every topic is embedded in the word-vector space; the score
//! of turn `i` on topic `j` is the cosine between the two embeddings. A turn
//! with no in-vocabulary words embeds to the zero vector and scores 0.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, Session, Speaker, Turn, Vocabulary};
use crate::embeddings::{cosine, EmbeddingMatrix};
use crate::etm::{top_words_from_beta, TopicModel};
use crate::linalg::axpy;

pub const DEFAULT_TOPIC_WORDS: usize = 10;

#[derive(Debug, Error)]
pub enum TemporalError {
    #[error("topic index {index} out of range for {count} topics")]
    Index { index: usize, count: usize },
    #[error("topic {0} selected more than once")]
    DuplicateTopic(usize),
    #[error("vocabulary mismatch: model expects {expected}, got {found}")]
    VocabMismatch { expected: String, found: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T, E = TemporalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub turn_index: usize,
    pub speaker: Speaker,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicScoreSeries {
    pub session_id: String,
    pub topic_count: usize,
    pub rows: Vec<ScoreRow>,
}

impl TopicScoreSeries {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Writes `turn_index,speaker,topic_0,...` with six decimals.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        write!(out, "turn_index,speaker")?;
        for k in 0..self.topic_count {
            write!(out, ",topic_{k}")?;
        }
        writeln!(out)?;
        for row in &self.rows {
            write!(out, "{},{}", row.turn_index, row.speaker)?;
            for s in &row.scores {
                write!(out, ",{s:.6}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub turn_index: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Unweighted mean of the vectors of the turn's in-vocabulary tokens; zero
/// when there are none.
pub fn embed_turn(turn: &Turn, vocab: &Vocabulary, rho: &EmbeddingMatrix) -> Vec<f64> {
    embed_text(&turn.text, vocab, rho)
}

pub fn embed_text(text: &str, vocab: &Vocabulary, rho: &EmbeddingMatrix) -> Vec<f64> {
    let mut sum = vec![0.0; rho.dim()];
    let mut n = 0usize;
    for id in vocab.encode(&tokenize(text)) {
        axpy(1.0, rho.row(id), &mut sum);
        n += 1;
    }
    if n > 0 {
        let inv = 1.0 / n as f64;
        sum.iter_mut().for_each(|x| *x *= inv);
    }
    sum
}

/// Weighted mean of the vectors of the `m` highest-weight words in
/// `beta_row`, with the weights renormalized over those words.
pub fn embed_topic_from_beta(beta_row: &[f64], rho: &EmbeddingMatrix, m: usize) -> Vec<f64> {
    let beta = crate::linalg::Matrix::from_vec(1, beta_row.len(), beta_row.to_vec());
    let top = &top_words_from_beta(&beta, m.max(1))[0];
    let total: f64 = top.iter().map(|&w| beta_row[w]).sum();
    let mut out = vec![0.0; rho.dim()];
    if total > 0.0 {
        for &w in top {
            axpy(beta_row[w] / total, rho.row(w), &mut out);
        }
    }
    out
}

pub fn embed_topic(model: &TopicModel, k: usize, m: usize) -> Result<Vec<f64>> {
    if k >= model.num_topics() {
        return Err(TemporalError::Index {
            index: k,
            count: model.num_topics(),
        });
    }
    Ok(embed_topic_from_beta(model.beta().row(k), model.rho(), m))
}

fn check_consistency(model: &TopicModel, vocab: &Vocabulary, rho: &EmbeddingMatrix) -> Result<()> {
    let found = vocab.hash();
    if found != model.vocab_hash() {
        return Err(TemporalError::VocabMismatch {
            expected: model.vocab_hash().to_owned(),
            found,
        });
    }
    if rho.vocab_hash() != found {
        return Err(TemporalError::VocabMismatch {
            expected: found,
            found: rho.vocab_hash(),
        });
    }
    if rho.dim() != model.dim() {
        return Err(TemporalError::DimensionMismatch(format!(
            "embeddings have dimension {}, topics {}",
            rho.dim(),
            model.dim()
        )));
    }
    Ok(())
}

/// Scores every turn of `session` against every topic of `model`, using the
/// top `DEFAULT_TOPIC_WORDS` words per topic.
pub fn score_session(
    session: &Session,
    model: &TopicModel,
    vocab: &Vocabulary,
    rho: &EmbeddingMatrix,
) -> Result<TopicScoreSeries> {
    score_session_with(session, model, vocab, rho, DEFAULT_TOPIC_WORDS)
}

pub fn score_session_with(
    session: &Session,
    model: &TopicModel,
    vocab: &Vocabulary,
    rho: &EmbeddingMatrix,
    topic_words: usize,
) -> Result<TopicScoreSeries> {
    check_consistency(model, vocab, rho)?;
    // weights from the model, vectors from `rho`
    let topics: Vec<Vec<f64>> = model
        .beta()
        .iter_rows()
        .map(|row| embed_topic_from_beta(row, rho, topic_words))
        .collect();
    let rows = session
        .turns()
        .iter()
        .map(|turn| {
            let e = embed_turn(turn, vocab, rho);
            let scores = topics
                .iter()
                .map(|t| cosine(t, &e).expect("dimensions checked above"))
                .collect();
            ScoreRow {
                turn_index: turn.turn_index,
                speaker: turn.speaker,
                scores,
            }
        })
        .collect();
    Ok(TopicScoreSeries {
        session_id: session.session_id().to_owned(),
        topic_count: model.num_topics(),
        rows,
    })
}

/// Projects each row of the series onto three distinct topics.
pub fn trajectory(series: &TopicScoreSeries, topics: (usize, usize, usize)) -> Result<Vec<TrajectoryPoint>> {
    let (a, b, c) = topics;
    for t in [a, b, c] {
        if t >= series.topic_count {
            return Err(TemporalError::Index {
                index: t,
                count: series.topic_count,
            });
        }
    }
    if a == b || a == c {
        return Err(TemporalError::DuplicateTopic(a));
    }
    if b == c {
        return Err(TemporalError::DuplicateTopic(b));
    }
    Ok(series
        .rows
        .iter()
        .map(|r| TrajectoryPoint {
            turn_index: r.turn_index,
            x: r.scores[a],
            y: r.scores[b],
            z: r.scores[c],
        })
        .collect())
}
