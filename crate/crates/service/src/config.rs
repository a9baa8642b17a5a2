//! TOML configuration and the on-disk layout of a data directory.
//!
//! ```text
//! <data_dir>/
//!   transcripts/*.jsonl
//!   vocab.txt
//!   embeddings.txt
//!   model.json
//!   models/<condition>.json      (per-condition models, optional)
//!   <session_id>/images/*.png
//!   <session_id>/outcomes.json
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use topicview_core::corpus::{DocumentUnit, VocabFilters};
use topicview_core::embeddings::SgnsConfig;
use topicview_core::etm::EtmConfig;
use topicview_core::imagegen::{DEFAULT_CONCURRENCY, DEFAULT_MAX_CHARS};
use topicview_core::temporal::DEFAULT_TOPIC_WORDS;

use crate::error::ServiceError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub corpus: CorpusSection,
    pub embeddings: SgnsConfig,
    pub etm: EtmSection,
    pub imagegen: ImagegenSection,
    pub server: ServerSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub min_count: u64,
    pub max_doc_ratio: f64,
    pub document_unit: DocumentUnit,
    /// Removed before vocabulary construction. Empty by default.
    pub stopwords: Vec<String>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let filters = VocabFilters::default();
        CorpusSection {
            min_count: filters.min_count,
            max_doc_ratio: filters.max_doc_ratio,
            document_unit: DocumentUnit::Session,
            stopwords: Vec::new(),
        }
    }
}

impl CorpusSection {
    pub fn filters(&self) -> VocabFilters {
        VocabFilters {
            min_count: self.min_count,
            max_doc_ratio: self.max_doc_ratio,
        }
    }

    pub fn stopword_set(&self) -> HashSet<String> {
        self.stopwords.iter().map(|s| s.to_lowercase()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EtmSection {
    #[serde(flatten)]
    pub model: EtmConfig,
    /// Also train one model per condition tag, used by `eval`.
    pub per_condition: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagegenSection {
    pub backend: BackendKind,
    pub max_chars: usize,
    pub concurrency: usize,
    /// HTTP backend endpoint; `IMAGEGEN_URL` is used when absent.
    pub endpoint: Option<String>,
    /// Mock backend only: refuse prompts containing this token.
    pub reject_token: Option<String>,
}

impl Default for ImagegenSection {
    fn default() -> Self {
        ImagegenSection {
            backend: BackendKind::Mock,
            max_chars: DEFAULT_MAX_CHARS,
            concurrency: DEFAULT_CONCURRENCY,
            endpoint: None,
            reject_token: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub host: String,
    pub port: u16,
    /// Relative paths are resolved against the config file's directory.
    pub data_dir: PathBuf,
    /// Built dashboard bundle served at `/`; relative to the data directory.
    pub dashboard_dir: PathBuf,
    /// Words per topic used to embed a topic when scoring.
    pub topic_words: usize,
}

impl Default for ServerSection {
    fn default() -> Self {
        ServerSection {
            host: "127.0.0.1".into(),
            port: 8080,
            data_dir: PathBuf::from("data"),
            dashboard_dir: PathBuf::from("dashboard"),
            topic_words: DEFAULT_TOPIC_WORDS,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        let config: Config =
            toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` and resolves a relative `server.data_dir` against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ServiceError::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let mut config = Self::from_toml(&text)?;
        if config.server.data_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            config.server.data_dir = base.join(&config.server.data_dir);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        let bad = |m: String| Err(ServiceError::Config(m));
        if self.corpus.min_count < 1 {
            return bad("corpus.min_count must be >= 1".into());
        }
        if !(self.corpus.max_doc_ratio > 0.0 && self.corpus.max_doc_ratio <= 1.0) {
            return bad("corpus.max_doc_ratio must lie in (0, 1]".into());
        }
        self.embeddings
            .validate()
            .map_err(|e| ServiceError::Config(e.to_string()))?;
        self.etm
            .model
            .validate()
            .map_err(|e| ServiceError::Config(e.to_string()))?;
        if self.imagegen.max_chars < 1 {
            return bad("imagegen.max_chars must be >= 1".into());
        }
        if self.server.topic_words < 1 {
            return bad("server.topic_words must be >= 1".into());
        }
        Ok(())
    }

    pub fn layout(&self) -> DataLayout {
        DataLayout::new(&self.server.data_dir)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataLayout {
    root: PathBuf,
}

impl DataLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DataLayout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn transcripts_dir(&self) -> PathBuf {
        self.root.join("transcripts")
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.txt")
    }

    pub fn embeddings(&self) -> PathBuf {
        self.root.join("embeddings.txt")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model.json")
    }

    pub fn condition_model(&self, tag: &str) -> PathBuf {
        self.root.join("models").join(format!("{tag}.json"))
    }

    pub fn session_dir(&self, session_id: &str) -> PathBuf {
        self.root.join(session_id)
    }

    pub fn outcomes(&self, session_id: &str) -> PathBuf {
        self.session_dir(session_id).join("outcomes.json")
    }
}

/// True when `name` can be used as a single path component.
pub fn is_safe_component(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && !name.contains(['/', '\\', '\0'])
}
