//! Topic coherence and topic diversity.
//!
//! Coherence averages, over the ordered pairs `i < j` of a topic's top `n`
//! words, `ln((D(w_i, w_j) + 1) / D(w_j))` where `D` counts the reference
//! documents containing the word(s). Diversity is the fraction of unique
//! words among all topics' top `n` words.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::etm::TopicModel;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("topic {topic} has {found} top words, {needed} required")]
    InsufficientTopWords {
        topic: usize,
        found: usize,
        needed: usize,
    },
    #[error("no topics given")]
    NoTopics,
    #[error("no reference documents given")]
    NoReferenceDocs,
    #[error("top-n must be at least {min}, got {found}")]
    InvalidN { min: usize, found: usize },
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    pub score: f64,
    /// Pairs whose conditioning word never occurs in the reference
    /// documents; their denominator was taken as 1.
    pub zero_df_pairs: usize,
}

fn check_lists<S>(top_words: &[Vec<S>], n: usize, min_n: usize) -> Result<()> {
    if top_words.is_empty() {
        return Err(MetricsError::NoTopics);
    }
    if n < min_n {
        return Err(MetricsError::InvalidN { min: min_n, found: n });
    }
    if let Some((topic, list)) = top_words.iter().enumerate().find(|(_, l)| l.len() < n) {
        return Err(MetricsError::InsufficientTopWords {
            topic,
            found: list.len(),
            needed: n,
        });
    }
    Ok(())
}

/// Turns tokenized documents into the word sets coherence counts over.
pub fn reference_sets<S: AsRef<str>>(documents: &[Vec<S>]) -> Vec<HashSet<String>> {
    documents
        .iter()
        .map(|d| d.iter().map(|t| t.as_ref().to_owned()).collect())
        .collect()
}

pub fn topic_coherence<S: AsRef<str>>(
    top_words: &[Vec<S>],
    reference_docs: &[HashSet<String>],
    n: usize,
) -> Result<Coherence> {
    check_lists(top_words, n, 2)?;
    if reference_docs.is_empty() {
        return Err(MetricsError::NoReferenceDocs);
    }

    // posting lists for just the words we need
    let mut postings: HashMap<&str, Vec<u32>> = top_words
        .iter()
        .flat_map(|l| l[..n].iter().map(|w| (w.as_ref(), Vec::new())))
        .collect();
    for (d, doc) in reference_docs.iter().enumerate() {
        for (word, list) in postings.iter_mut() {
            if doc.contains(*word) {
                list.push(d as u32);
            }
        }
    }

    let pair_weight = 2.0 / (n * (n - 1)) as f64;
    let mut zero_df_pairs = 0;
    let mut total = 0.0;
    for list in top_words {
        let mut topic_sum = 0.0;
        for j in 1..n {
            let docs_j = &postings[list[j].as_ref()];
            let df_j = if docs_j.is_empty() {
                zero_df_pairs += j;
                1.0
            } else {
                docs_j.len() as f64
            };
            for i in 0..j {
                let co = intersection_len(&postings[list[i].as_ref()], docs_j);
                topic_sum += ((co as f64 + 1.0) / df_j).ln();
            }
        }
        total += pair_weight * topic_sum;
    }
    Ok(Coherence {
        score: total / top_words.len() as f64,
        zero_df_pairs,
    })
}

fn intersection_len(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

pub fn topic_diversity<S: AsRef<str>>(top_words: &[Vec<S>], n: usize) -> Result<f64> {
    check_lists(top_words, n, 1)?;
    let unique: HashSet<&str> = top_words
        .iter()
        .flat_map(|l| l[..n].iter().map(AsRef::as_ref))
        .collect();
    Ok(unique.len() as f64 / (n * top_words.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub model_name: String,
    pub condition_tag: Option<String>,
    pub top_n_coherence: usize,
    pub top_n_diversity: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            model_name: "ETM".into(),
            condition_tag: None,
            top_n_coherence: 10,
            top_n_diversity: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_name: String,
    pub condition_tag: Option<String>,
    pub coherence: f64,
    pub diversity: f64,
    pub top_n_coherence: usize,
    pub top_n_diversity: usize,
    pub reference_doc_count: usize,
    pub zero_df_pairs: usize,
}

pub fn evaluate(
    model: &TopicModel,
    reference_docs: &[HashSet<String>],
    options: &EvalOptions,
) -> Result<EvalReport> {
    let n = options.top_n_coherence.max(options.top_n_diversity);
    let top = model.top_words(n);
    let coherence = topic_coherence(&top, reference_docs, options.top_n_coherence)?;
    let diversity = topic_diversity(&top, options.top_n_diversity)?;
    Ok(EvalReport {
        model_name: options.model_name.clone(),
        condition_tag: options.condition_tag.clone(),
        coherence: coherence.score,
        diversity,
        top_n_coherence: options.top_n_coherence,
        top_n_diversity: options.top_n_diversity,
        reference_doc_count: reference_docs.len(),
        zero_df_pairs: coherence.zero_df_pairs,
    })
}

pub fn write_reports_csv(reports: &[EvalReport], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "model,condition,coherence,diversity,n_coh,n_div,docs")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{},{},{}",
            r.model_name,
            r.condition_tag.as_deref().unwrap_or("all"),
            r.coherence,
            r.diversity,
            r.top_n_coherence,
            r.top_n_diversity,
            r.reference_doc_count
        )?;
    }
    out.flush()
}

/// Plain-text table: one row per model, a TC/TD column pair per condition.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut conditions: Vec<&str> = Vec::new();
    let mut models: Vec<&str> = Vec::new();
    for r in reports {
        let c = r.condition_tag.as_deref().unwrap_or("all");
        if !conditions.contains(&c) {
            conditions.push(c);
        }
        if !models.contains(&r.model_name.as_str()) {
            models.push(&r.model_name);
        }
    }
    let mut out = String::new();
    let _ = write!(out, "{:<10}", "Model");
    for c in &conditions {
        let _ = write!(out, " | {:^23}", c);
    }
    out.push('\n');
    let _ = write!(out, "{:<10}", "");
    for _ in &conditions {
        let _ = write!(out, " | {:>11} {:>11}", "TC", "TD");
    }
    out.push('\n');
    for m in models {
        let _ = write!(out, "{m:<10}");
        for c in &conditions {
            match reports
                .iter()
                .find(|r| r.model_name == m && r.condition_tag.as_deref().unwrap_or("all") == *c)
            {
                Some(r) => {
                    let _ = write!(out, " | {:>11.3} {:>11.3}", r.coherence, r.diversity);
                }
                None => {
                    let _ = write!(out, " | {:>11} {:>11}", "-", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(raw: &[&[&str]]) -> Vec<HashSet<String>> {
        raw.iter()
            .map(|d| d.iter().map(|w| w.to_string()).collect())
            .collect()
    }

    #[test]
    fn fully_co_occurring_pair() {
        let refs = docs(&[&["a", "b"], &["a", "b"], &["a", "b"], &["b", "a"]]);
        let c = topic_coherence(&[vec!["a", "b"]], &refs, 2).unwrap();
        assert!((c.score - (5.0f64 / 4.0).ln()).abs() < 1e-12);
        assert!((c.score - 0.2231).abs() < 1e-4);
    }

    #[test]
    fn never_co_occurring_pair() {
        let refs = docs(&[&["a"], &["b"], &["b"], &["b"], &["b"]]);
        let c = topic_coherence(&[vec!["a", "b"]], &refs, 2).unwrap();
        assert!((c.score - (0.25f64).ln()).abs() < 1e-12);
        assert!((c.score + 1.3863).abs() < 1e-4);
    }

    #[test]
    fn absent_conditioning_word_is_tallied() {
        let refs = docs(&[&["a"], &["a"]]);
        let c = topic_coherence(&[vec!["a", "zz"]], &refs, 2).unwrap();
        assert_eq!(c.zero_df_pairs, 1);
        assert_eq!(c.score, 0.0);
    }

    #[test]
    fn diversity_examples() {
        assert_eq!(topic_diversity(&[vec!["a", "b"], vec!["b", "c"]], 2).unwrap(), 0.75);
        let same = vec![vec!["a", "b", "c"]; 4];
        assert_eq!(topic_diversity(&same, 3).unwrap(), 0.25);
        assert_eq!(
            topic_diversity(&[vec!["a", "b"], vec!["c", "d"], vec!["e", "f"]], 2).unwrap(),
            1.0
        );
    }

    #[test]
    fn metric_errors() {
        assert_eq!(
            topic_diversity(&[vec!["a"]], 2),
            Err(MetricsError::InsufficientTopWords {
                topic: 0,
                found: 1,
                needed: 2
            })
        );
        let empty: Vec<Vec<&str>> = vec![];
        assert_eq!(topic_diversity(&empty, 2), Err(MetricsError::NoTopics));
        assert_eq!(
            topic_coherence(&[vec!["a", "b"]], &[], 2),
            Err(MetricsError::NoReferenceDocs)
        );
        assert!(matches!(
            topic_coherence(&[vec!["a", "b"]], &docs(&[&["a"]]), 1),
            Err(MetricsError::InvalidN { .. })
        ));
    }

    #[test]
    fn csv_and_table_output() {
        let r = EvalReport {
            model_name: "ETM".into(),
            condition_tag: Some("anxiety".into()),
            coherence: -2.5,
            diversity: 0.8,
            top_n_coherence: 10,
            top_n_diversity: 25,
            reference_doc_count: 40,
            zero_df_pairs: 0,
        };
        let mut buf = Vec::new();
        write_reports_csv(std::slice::from_ref(&r), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "model,condition,coherence,diversity,n_coh,n_div,docs\nETM,anxiety,-2.500000,0.800000,10,25,40\n"
        );
        let table = format_table(&[r]);
        assert!(table.contains("anxiety"));
        assert!(table.contains("-2.500"));
    }
}
