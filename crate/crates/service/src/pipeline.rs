//! Offline steps behind the CLI: ingest, training and evaluation.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use topicview_core::corpus::{
    build_vocabulary, load_transcripts, save_transcripts, session_documents, to_bow, Session,
};
use topicview_core::embeddings::{save_embeddings, train_sgns};
use topicview_core::etm::{train_etm, TopicModel};
use topicview_core::metrics::{evaluate as evaluate_model, reference_sets, EvalOptions, EvalReport};

use crate::config::{is_safe_component, Config, DataLayout};
use crate::error::ServiceError;
use crate::state::{load_model, load_vocab_and_embeddings, read_sessions};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    pub stored_as: PathBuf,
    pub sessions: usize,
    pub turns: usize,
}

/// Validates a transcript file and stores it under the transcript
/// directory, normalized (sessions grouped, turns in order).
pub fn ingest(layout: &DataLayout, source: &Path) -> Result<IngestSummary, ServiceError> {
    let sessions = load_transcripts(source)?;
    let dir = layout.transcripts_dir();
    std::fs::create_dir_all(&dir).map_err(|e| ServiceError::io(&dir, e))?;
    let name = source
        .file_name()
        .ok_or_else(|| ServiceError::Config(format!("{} is not a file", source.display())))?;
    let target = dir.join(name).with_extension("jsonl");

    let existing = if dir.read_dir().map_err(|e| ServiceError::io(&dir, e))?.next().is_some() {
        other_sessions(&dir, &target)?
    } else {
        HashSet::new()
    };
    for s in &sessions {
        if existing.contains(s.session_id()) {
            return Err(ServiceError::Config(format!(
                "session {:?} already exists in another transcript file",
                s.session_id()
            )));
        }
    }
    save_transcripts(&sessions, &target)?;
    Ok(IngestSummary {
        stored_as: target,
        sessions: sessions.len(),
        turns: sessions.iter().map(Session::len).sum(),
    })
}

fn other_sessions(dir: &Path, except: &Path) -> Result<HashSet<String>, ServiceError> {
    let mut ids = HashSet::new();
    for entry in std::fs::read_dir(dir).map_err(|e| ServiceError::io(dir, e))?.flatten() {
        let path = entry.path();
        if path == except || path.extension().is_none_or(|x| x != "jsonl") {
            continue;
        }
        ids.extend(load_transcripts(&path)?.iter().map(|s| s.session_id().to_owned()));
    }
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingSummary {
    pub vocab_size: usize,
    pub dim: usize,
    pub documents: usize,
    pub epoch_losses: Vec<f64>,
    pub deterministic: bool,
}

/// Builds the vocabulary from every stored transcript and trains word
/// embeddings over it.
pub fn train_embeddings(config: &Config) -> Result<EmbeddingSummary, ServiceError> {
    let layout = config.layout();
    let sessions = read_sessions(&layout)?;
    let docs = documents(config, &sessions);
    let vocab = build_vocabulary(&docs, config.corpus.filters())?;
    let ids: Vec<Vec<usize>> = docs.iter().map(|d| vocab.encode(d)).collect();
    let out = train_sgns(&ids, &vocab, &config.embeddings)?;
    vocab.save(layout.vocab())?;
    save_embeddings(&out.embeddings, layout.embeddings())?;
    Ok(EmbeddingSummary {
        vocab_size: vocab.len(),
        dim: out.embeddings.dim(),
        documents: docs.len(),
        epoch_losses: out.epoch_losses,
        deterministic: out.deterministic,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EtmSummary {
    pub topics: usize,
    pub documents: usize,
    pub final_elbo: f64,
    pub condition_models: Vec<String>,
    pub embeddings_updated: bool,
}

/// Trains the universal topic model (and per-condition models when
/// configured) against the stored vocabulary and embeddings.
pub fn train_topics(config: &Config) -> Result<EtmSummary, ServiceError> {
    let layout = config.layout();
    let (vocab, rho) = load_vocab_and_embeddings(&layout)?;
    let sessions = read_sessions(&layout)?;
    let bows: Vec<_> = documents(config, &sessions)
        .iter()
        .map(|d| to_bow(d, &vocab))
        .collect();
    let model = train_etm(&bows, &rho, &config.etm.model)?;
    let embeddings_updated = config.etm.model.train_embeddings;
    if embeddings_updated {
        save_embeddings(model.rho(), layout.embeddings())?;
    }
    model.save(layout.model())?;

    let mut condition_models = Vec::new();
    if config.etm.per_condition {
        // condition models share the universal model's word embeddings
        let rho = Arc::clone(model.rho());
        for (tag, group) in by_condition(&sessions) {
            if !is_safe_component(&tag) {
                return Err(ServiceError::Config(format!(
                    "condition tag {tag:?} cannot name a model file"
                )));
            }
            let bows: Vec<_> = documents(config, &group)
                .iter()
                .map(|d| to_bow(d, &vocab))
                .collect();
            let config = topicview_core::etm::EtmConfig {
                train_embeddings: false,
                ..config.etm.model.clone()
            };
            let m = train_etm(&bows, &rho, &config)?;
            let path = layout.condition_model(&tag);
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| ServiceError::io(dir, e))?;
            }
            m.save(&path)?;
            condition_models.push(tag);
        }
    }
    Ok(EtmSummary {
        topics: model.num_topics(),
        documents: bows.len(),
        final_elbo: model.meta().epoch_elbo.last().copied().unwrap_or(f64::NAN),
        condition_models,
        embeddings_updated,
    })
}

/// Coherence and diversity of the universal model over the whole corpus
/// and, for each condition, of that condition's model (the universal one
/// when none was trained) over the condition's sessions.
pub fn evaluate(config: &Config) -> Result<Vec<EvalReport>, ServiceError> {
    let layout = config.layout();
    let (_, rho) = load_vocab_and_embeddings(&layout)?;
    let rho = Arc::new(rho);
    let universal = load_model(&layout.model(), Arc::clone(&rho))?;
    let sessions = read_sessions(&layout)?;

    let mut reports = vec![report(config, &universal, &sessions, None)?];
    for (tag, group) in by_condition(&sessions) {
        let path = layout.condition_model(&tag);
        let condition_model;
        let model = if path.is_file() {
            condition_model = load_model(&path, Arc::clone(&rho))?;
            &condition_model
        } else {
            &universal
        };
        reports.push(report(config, model, &group, Some(tag))?);
    }
    Ok(reports)
}

fn report(
    config: &Config,
    model: &TopicModel,
    sessions: &[Session],
    condition_tag: Option<String>,
) -> Result<EvalReport, ServiceError> {
    let refs = reference_sets(&documents(config, sessions));
    let options = EvalOptions {
        condition_tag,
        top_n_diversity: EvalOptions::default().top_n_diversity.min(model.vocab_size()),
        top_n_coherence: EvalOptions::default().top_n_coherence.min(model.vocab_size()),
        ..EvalOptions::default()
    };
    Ok(evaluate_model(model, &refs, &options)?)
}

fn documents(config: &Config, sessions: &[Session]) -> Vec<Vec<String>> {
    session_documents(
        sessions,
        config.corpus.document_unit,
        &config.corpus.stopword_set(),
    )
}

fn by_condition(sessions: &[Session]) -> BTreeMap<String, Vec<Session>> {
    let mut groups: BTreeMap<String, Vec<Session>> = BTreeMap::new();
    for s in sessions {
        if let Some(tag) = s.condition_tag() {
            groups.entry(tag.to_owned()).or_default().push(s.clone());
        }
    }
    groups
}
