//! The loaded artifact snapshot plus the two pieces of mutable state: the
//! per-session score cache and the image outcome store.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use topicview_core::corpus::{load_transcripts, Session, Speaker, Turn, Vocabulary};
use topicview_core::embeddings::EmbeddingMatrix;
use topicview_core::etm::{EtmError, TopicModel};
use topicview_core::imagegen::{
    chunk_transcript, generate_images, image_file_name, media_dir, HttpBackend, ImageBackend,
    ImageRequestOutcome, MockBackend, OutcomeStatus, URL_ENV,
};
use topicview_core::temporal::{score_session_with, trajectory, TopicScoreSeries, TrajectoryPoint};

use crate::config::{is_safe_component, BackendKind, Config, DataLayout};
use crate::error::{ApiError, ServiceError};

pub struct AppState {
    config: Config,
    layout: DataLayout,
    vocab: Vocabulary,
    rho: Arc<EmbeddingMatrix>,
    model: TopicModel,
    sessions: RwLock<BTreeMap<String, Arc<Session>>>,
    scores: RwLock<HashMap<String, Arc<TopicScoreSeries>>>,
    images: RwLock<HashMap<String, Arc<Vec<StoredOutcome>>>>,
    image_jobs: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    backend: Result<Arc<dyn ImageBackend>, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub condition_tag: Option<String>,
    pub turn_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnLabel {
    pub turn_index: usize,
    pub speaker: Speaker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresResponse {
    pub session_id: String,
    pub k: usize,
    pub n: usize,
    pub turns: Vec<TurnLabel>,
    /// `n` rows of `k` cosine scores.
    pub matrix: Vec<Vec<f64>>,
}

impl From<&TopicScoreSeries> for ScoresResponse {
    fn from(s: &TopicScoreSeries) -> Self {
        ScoresResponse {
            session_id: s.session_id.clone(),
            k: s.topic_count,
            n: s.rows.len(),
            turns: s
                .rows
                .iter()
                .map(|r| TurnLabel {
                    turn_index: r.turn_index,
                    speaker: r.speaker,
                })
                .collect(),
            matrix: s.rows.iter().map(|r| r.scores.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResponse {
    pub session_id: String,
    pub topics: [usize; 3],
    pub points: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptResponse {
    pub session_id: String,
    pub condition_tag: Option<String>,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedWord {
    pub word: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub index: usize,
    pub words: Vec<WeightedWord>,
}

/// An image outcome as stored and served: `image_path` is relative to the
/// data directory and `image_url` points at the media route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredOutcome {
    #[serde(flatten)]
    pub outcome: ImageRequestOutcome,
    pub image_url: Option<String>,
}

pub const TOPIC_LIST_WORDS: usize = 10;

fn load_sessions(dir: &Path) -> Result<BTreeMap<String, Arc<Session>>, ServiceError> {
    if !dir.is_dir() {
        return Err(ServiceError::Config(format!(
            "transcript directory {} does not exist",
            dir.display()
        )));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| ServiceError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut sessions = BTreeMap::new();
    for file in files {
        for session in load_transcripts(&file)? {
            let id = session.session_id().to_owned();
            if sessions.insert(id.clone(), Arc::new(session)).is_some() {
                return Err(ServiceError::Config(format!(
                    "session {id:?} appears in more than one transcript file (latest: {})",
                    file.display()
                )));
            }
        }
    }
    Ok(sessions)
}

/// Every session under `layout`, in id order.
pub fn read_sessions(layout: &DataLayout) -> Result<Vec<Session>, ServiceError> {
    Ok(load_sessions(&layout.transcripts_dir())?
        .into_values()
        .map(|s| (*s).clone())
        .collect())
}

/// Loads the vocabulary and embeddings and checks they belong together.
pub fn load_vocab_and_embeddings(
    layout: &DataLayout,
) -> Result<(Vocabulary, EmbeddingMatrix), ServiceError> {
    let vocab = Vocabulary::load(layout.vocab())?;
    let rho = EmbeddingMatrix::load(layout.embeddings())?;
    if rho.vocab_hash() != vocab.hash() {
        return Err(ServiceError::ArtifactMismatch(format!(
            "{} was trained on vocabulary {}, {} has vocabulary {}",
            layout.embeddings().display(),
            rho.vocab_hash(),
            layout.vocab().display(),
            vocab.hash()
        )));
    }
    Ok((vocab, rho))
}

pub fn load_model(path: &Path, rho: Arc<EmbeddingMatrix>) -> Result<TopicModel, ServiceError> {
    TopicModel::load(path, rho).map_err(|e| match e {
        EtmError::VocabMismatch { expected, found } => ServiceError::ArtifactMismatch(format!(
            "{} was trained on vocabulary {expected}, embeddings have vocabulary {found}",
            path.display()
        )),
        other => other.into(),
    })
}

fn build_backend(config: &Config) -> Result<Arc<dyn ImageBackend>, String> {
    match config.imagegen.backend {
        BackendKind::Mock => Ok(Arc::new(MockBackend {
            reject_token: config.imagegen.reject_token.clone(),
        })),
        BackendKind::Http => {
            let token = std::env::var(topicview_core::imagegen::TOKEN_ENV).ok();
            match &config.imagegen.endpoint {
                Some(url) => Ok(Arc::new(HttpBackend::new(url.clone(), token))),
                None => HttpBackend::from_env()
                    .map(|b| Arc::new(b) as Arc<dyn ImageBackend>)
                    .map_err(|_| {
                        format!("HTTP image backend selected but neither imagegen.endpoint nor {URL_ENV} is set")
                    }),
            }
        }
    }
}

/// Reads the config file and loads the state it describes.
pub fn load_state(config_path: &Path) -> Result<AppState, ServiceError> {
    AppState::load(Config::load(config_path)?)
}

impl AppState {
    pub fn load(config: Config) -> Result<Self, ServiceError> {
        let layout = config.layout();
        let sessions = load_sessions(&layout.transcripts_dir())?;
        let (vocab, rho) = load_vocab_and_embeddings(&layout)?;
        let rho = Arc::new(rho);
        let model = load_model(&layout.model(), Arc::clone(&rho))?;
        let backend = build_backend(&config);
        if let Err(problem) = &backend {
            tracing::warn!("{problem}; image generation is disabled");
        }
        Ok(AppState {
            config,
            layout,
            vocab,
            rho,
            model,
            sessions: RwLock::new(sessions),
            scores: RwLock::new(HashMap::new()),
            images: RwLock::new(HashMap::new()),
            image_jobs: Mutex::new(HashMap::new()),
            backend,
        })
    }

    /// Replaces the image backend chosen by the configuration.
    pub fn with_backend(mut self, backend: Arc<dyn ImageBackend>) -> Self {
        self.backend = Ok(backend);
        self
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn layout(&self) -> &DataLayout {
        &self.layout
    }

    pub fn model(&self) -> &TopicModel {
        &self.model
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Re-reads the transcript directory, dropping cached scores of any
    /// session whose content changed.
    pub fn rescan(&self) -> Result<(), ServiceError> {
        let fresh = load_sessions(&self.layout.transcripts_dir())?;
        let mut sessions = self.sessions.write().expect("session lock poisoned");
        let mut scores = self.scores.write().expect("score lock poisoned");
        scores.retain(|id, _| fresh.get(id) == sessions.get(id));
        *sessions = fresh;
        Ok(())
    }

    pub fn session(&self, session_id: &str) -> Result<Arc<Session>, ApiError> {
        if let Some(s) = self.sessions.read().expect("session lock poisoned").get(session_id) {
            return Ok(Arc::clone(s));
        }
        self.rescan().map_err(ApiError::from)?;
        self.sessions
            .read()
            .expect("session lock poisoned")
            .get(session_id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(session_id))
    }

    pub fn list_sessions(&self) -> Result<Vec<SessionSummary>, ApiError> {
        self.rescan().map_err(ApiError::from)?;
        Ok(self
            .sessions
            .read()
            .expect("session lock poisoned")
            .values()
            .map(|s| SessionSummary {
                session_id: s.session_id().to_owned(),
                condition_tag: s.condition_tag().map(str::to_owned),
                turn_count: s.len(),
            })
            .collect())
    }

    /// Topic scores of a session, computed on first use and cached.
    pub fn scores(&self, session_id: &str) -> Result<Arc<TopicScoreSeries>, ApiError> {
        if let Some(s) = self.scores.read().expect("score lock poisoned").get(session_id) {
            return Ok(Arc::clone(s));
        }
        let session = self.session(session_id)?;
        let series = Arc::new(self.compute_scores(&session)?);
        let mut cache = self.scores.write().expect("score lock poisoned");
        Ok(Arc::clone(
            cache.entry(session_id.to_owned()).or_insert(series),
        ))
    }

    /// Scores without touching the cache.
    pub fn compute_scores(&self, session: &Session) -> Result<TopicScoreSeries, ApiError> {
        score_session_with(
            session,
            &self.model,
            &self.vocab,
            &self.rho,
            self.config.server.topic_words,
        )
        .map_err(|e| ApiError::invariant(e.to_string()))
    }

    pub fn trajectory(
        &self,
        session_id: &str,
        topics: [usize; 3],
    ) -> Result<TrajectoryResponse, ApiError> {
        let series = self.scores(session_id)?;
        let points = trajectory(&series, (topics[0], topics[1], topics[2]))
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        Ok(TrajectoryResponse {
            session_id: session_id.to_owned(),
            topics,
            points,
        })
    }

    /// Turns `from..=to`; both ends default to the whole session.
    pub fn transcript(
        &self,
        session_id: &str,
        from: Option<usize>,
        to: Option<usize>,
    ) -> Result<TranscriptResponse, ApiError> {
        let session = self.session(session_id)?;
        let from = from.unwrap_or(0);
        let to = to.unwrap_or(usize::MAX);
        if from > to {
            return Err(ApiError::bad_request(format!(
                "inverted turn range: from={from} > to={to}"
            )));
        }
        Ok(TranscriptResponse {
            session_id: session_id.to_owned(),
            condition_tag: session.condition_tag().map(str::to_owned),
            turns: session
                .turns()
                .iter()
                .filter(|t| (from..=to).contains(&t.turn_index))
                .cloned()
                .collect(),
        })
    }

    /// Top words of every topic with their weights.
    pub fn topics(&self) -> Vec<TopicSummary> {
        let beta = self.model.beta();
        self.model
            .top_word_ids(TOPIC_LIST_WORDS.min(self.model.vocab_size()))
            .into_iter()
            .enumerate()
            .map(|(k, ids)| TopicSummary {
                index: k,
                words: ids
                    .into_iter()
                    .map(|w| WeightedWord {
                        word: self.rho.tokens()[w].clone(),
                        weight: beta.get(k, w),
                    })
                    .collect(),
            })
            .collect()
    }

    fn image_session_id<'a>(&self, session_id: &'a str) -> Result<&'a str, ApiError> {
        if is_safe_component(session_id) {
            Ok(session_id)
        } else {
            Err(ApiError::bad_request(format!(
                "session id {session_id:?} cannot name a media directory"
            )))
        }
    }

    /// The stored outcome set, empty when images were never generated.
    pub fn images(&self, session_id: &str) -> Result<Arc<Vec<StoredOutcome>>, ApiError> {
        self.session(session_id)?;
        let id = self.image_session_id(session_id)?;
        if let Some(o) = self.images.read().expect("image lock poisoned").get(id) {
            return Ok(Arc::clone(o));
        }
        let path = self.layout.outcomes(id);
        let stored: Vec<StoredOutcome> = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| {
                ApiError::invariant(format!("corrupt outcome file {}: {e}", path.display()))
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(ServiceError::io(&path, e).into()),
        };
        let stored = Arc::new(stored);
        self.images
            .write()
            .expect("image lock poisoned")
            .insert(id.to_owned(), Arc::clone(&stored));
        Ok(stored)
    }

    /// Chunks the session text, generates one image per excerpt and replaces
    /// the stored outcome set. Calls for the same session run one at a time.
    pub fn generate_images(&self, session_id: &str) -> Result<Arc<Vec<StoredOutcome>>, ApiError> {
        let session = self.session(session_id)?;
        let id = self.image_session_id(session_id)?;
        let backend = self
            .backend
            .as_ref()
            .map_err(|problem| ApiError::backend(problem.clone()))?;

        let job = Arc::clone(
            self.image_jobs
                .lock()
                .expect("image job lock poisoned")
                .entry(id.to_owned())
                .or_default(),
        );
        let _guard = job.lock().expect("image job lock poisoned");

        let dir = media_dir(self.layout.root(), id);
        clear_pngs(&dir).map_err(ApiError::from)?;
        let excerpts = chunk_transcript(id, &session.text(), self.config.imagegen.max_chars);
        let outcomes = generate_images(
            &excerpts,
            backend.as_ref(),
            &dir,
            self.config.imagegen.concurrency,
        )
        .map_err(|e| ApiError::from(ServiceError::from(e)))?;
        let stored: Vec<StoredOutcome> = outcomes
            .into_iter()
            .map(|mut outcome| {
                let image_url = (outcome.status == OutcomeStatus::Generated).then(|| {
                    let file = image_file_name(id, outcome.ordinal);
                    outcome.image_path = Some(format!("{id}/images/{file}"));
                    format!("/media/{id}/{file}")
                });
                StoredOutcome { outcome, image_url }
            })
            .collect();

        let path = self.layout.outcomes(id);
        let json = serde_json::to_string_pretty(&stored).expect("outcomes serialize");
        std::fs::write(&path, json).map_err(|e| ApiError::from(ServiceError::io(&path, e)))?;
        let stored = Arc::new(stored);
        self.images
            .write()
            .expect("image lock poisoned")
            .insert(id.to_owned(), Arc::clone(&stored));
        Ok(stored)
    }

    /// File path of a generated image, if `file` names one.
    pub fn media_file(&self, session_id: &str, file: &str) -> Option<PathBuf> {
        if !is_safe_component(session_id) || !is_safe_component(file) || !file.ends_with(".png") {
            return None;
        }
        let path = media_dir(self.layout.root(), session_id).join(file);
        path.is_file().then_some(path)
    }

    /// Directory of the built dashboard bundle.
    pub fn dashboard_dir(&self) -> PathBuf {
        self.layout.root().join(&self.config.server.dashboard_dir)
    }
}

fn clear_pngs(dir: &Path) -> Result<(), ServiceError> {
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(ServiceError::io(dir, e)),
    };
    for entry in entries.flatten() {
        let path = entry.path();
        if path.extension().is_some_and(|x| x == "png") {
            std::fs::remove_file(&path).map_err(|e| ServiceError::io(&path, e))?;
        }
    }
    Ok(())
}
