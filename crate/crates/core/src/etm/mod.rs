//! Embedded topic model.
//!
//! Topics live in the word-embedding space: topic `k` has an embedding
//! `alpha_k` and its word distribution is `beta_k = softmax(rho alpha_k)`,
//! where `rho` is the `V x D` word-embedding matrix. Document-topic
//! proportions follow a logistic-normal posterior produced by an amortized
//! encoder, and everything is fit by stochastic ELBO maximization.

mod encoder;
mod objective;
mod train;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::EmbeddingMatrix;
use crate::linalg::{dot, softmax_in_place, Matrix};

pub use encoder::{encode, EncoderParams};
pub use objective::{elbo_and_grads, gaussian_kl, theta_from, ElboOutput, LOG_FLOOR};
pub use train::{train_etm, train_etm_with, Adam, EpochReport};

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EtmError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid ETM configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("numerical error at epoch {epoch}, batch {batch}: {message}")]
    Diverged {
        epoch: usize,
        batch: usize,
        message: String,
    },
    #[error("model was trained on vocabulary {expected}, embeddings carry {found}")]
    VocabMismatch { expected: String, found: String },
    #[error("model file: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = EtmError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EtmConfig {
    pub num_topics: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Update the word embeddings jointly with the topics.
    pub train_embeddings: bool,
    pub hidden_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for EtmConfig {
    fn default() -> Self {
        EtmConfig {
            num_topics: 10,
            epochs: 100,
            batch_size: 16,
            lr: 5e-3,
            seed: 1,
            train_embeddings: false,
            hidden_size: 128,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl EtmConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(EtmError::InvalidConfig(m.to_owned()));
        if self.num_topics < 2 {
            return fail("num_topics must be >= 2");
        }
        if self.epochs < 1 {
            return fail("epochs must be >= 1");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be >= 1");
        }
        if self.hidden_size < 1 {
            return fail("hidden_size must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("moment decay rates must lie in [0, 1)");
        }
        Ok(())
    }
}

/// `K x V` topic-word distributions: row `k` is the softmax over the
/// vocabulary of `rho alpha_k`.
pub fn beta_from(alpha: &Matrix, rho: &EmbeddingMatrix) -> Result<Matrix> {
    if alpha.cols() != rho.dim() {
        return Err(EtmError::DimensionMismatch(format!(
            "topic embeddings have dimension {}, word embeddings {}",
            alpha.cols(),
            rho.dim()
        )));
    }
    let v = rho.len();
    let mut beta = Matrix::zeros(alpha.rows(), v);
    for (k, topic) in alpha.iter_rows().enumerate() {
        let row = beta.row_mut(k);
        for (w, word) in rho.rows().enumerate() {
            row[w] = dot(word, topic);
        }
        softmax_in_place(row);
    }
    Ok(beta)
}

/// Per topic, the `n` word ids with the largest weight; ties go to the
/// smaller id.
pub fn top_words_from_beta(beta: &Matrix, n: usize) -> Vec<Vec<usize>> {
    beta.iter_rows()
        .map(|row| {
            let mut ids: Vec<usize> = (0..row.len()).collect();
            ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            ids.truncate(n);
            ids
        })
        .collect()
}

/// Training provenance stored with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub config: EtmConfig,
    pub vocab_hash: String,
    /// Mean per-document ELBO after each epoch.
    pub epoch_elbo: Vec<f64>,
    pub num_docs: usize,
}

#[derive(Debug, Clone)]
pub struct TopicModel {
    alpha: Matrix,
    rho: Arc<EmbeddingMatrix>,
    beta: Matrix,
    ranking: Vec<Vec<usize>>,
    meta: TrainMeta,
    encoder: Option<EncoderParams>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "D")]
    d: usize,
    alpha: Vec<Vec<f64>>,
    vocab_hash: String,
    train_meta: TrainMeta,
}

impl TopicModel {
    /// Assembles a model from topic embeddings, checking that the embeddings
    /// match the vocabulary recorded in `meta`.
    pub fn new(alpha: Matrix, rho: Arc<EmbeddingMatrix>, meta: TrainMeta) -> Result<Self> {
        let found = rho.vocab_hash();
        if found != meta.vocab_hash {
            return Err(EtmError::VocabMismatch {
                expected: meta.vocab_hash,
                found,
            });
        }
        if alpha.rows() < 1 {
            return Err(EtmError::InvalidConfig("model has no topics".into()));
        }
        if alpha.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(EtmError::Numerical("non-finite topic embedding".into()));
        }
        let beta = beta_from(&alpha, &rho)?;
        let ranking = top_words_from_beta(&beta, rho.len());
        Ok(TopicModel {
            alpha,
            rho,
            beta,
            ranking,
            meta,
            encoder: None,
        })
    }

    pub(crate) fn with_encoder(mut self, encoder: EncoderParams) -> Self {
        self.encoder = Some(encoder);
        self
    }

    pub fn num_topics(&self) -> usize {
        self.alpha.rows()
    }

    pub fn dim(&self) -> usize {
        self.alpha.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.rho.len()
    }

    pub fn alpha(&self) -> &Matrix {
        &self.alpha
    }

    pub fn beta(&self) -> &Matrix {
        &self.beta
    }

    pub fn rho(&self) -> &Arc<EmbeddingMatrix> {
        &self.rho
    }

    pub fn meta(&self) -> &TrainMeta {
        &self.meta
    }

    /// Inference network, available on freshly trained models only.
    pub fn encoder(&self) -> Option<&EncoderParams> {
        self.encoder.as_ref()
    }

    pub fn vocab_hash(&self) -> &str {
        &self.meta.vocab_hash
    }

    /// Ids of the `n` highest-weight words of every topic.
    pub fn top_word_ids(&self, n: usize) -> Vec<Vec<usize>> {
        self.ranking
            .iter()
            .map(|r| r[..n.min(r.len())].to_vec())
            .collect()
    }

    /// Tokens of the `n` highest-weight words of every topic.
    pub fn top_words(&self, n: usize) -> Vec<Vec<String>> {
        self.top_word_ids(n)
            .into_iter()
            .map(|ids| ids.into_iter().map(|id| self.rho.tokens()[id].clone()).collect())
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| EtmError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = ModelFile {
            version: MODEL_FILE_VERSION,
            k: self.num_topics(),
            d: self.dim(),
            alpha: self.alpha.to_rows(),
            vocab_hash: self.meta.vocab_hash.clone(),
            train_meta: self.meta.clone(),
        };
        let out = BufWriter::new(File::create(path).map_err(io_err)?);
        serde_json::to_writer_pretty(out, &file).map_err(|e| EtmError::Format(e.to_string()))
    }

    /// Reads a model file; `beta` is recomputed from `alpha` and `rho`.
    pub fn load(path: impl AsRef<Path>, rho: Arc<EmbeddingMatrix>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path).map_err(|source| EtmError::Io {
            path: path.display().to_string(),
            source,
        })?);
        let file: ModelFile =
            serde_json::from_reader(reader).map_err(|e| EtmError::Format(e.to_string()))?;
        if file.version != MODEL_FILE_VERSION {
            return Err(EtmError::Format(format!("unsupported version {}", file.version)));
        }
        let alpha = Matrix::from_rows(&file.alpha)
            .ok_or_else(|| EtmError::Format("ragged alpha".into()))?;
        if alpha.rows() != file.k || alpha.cols() != file.d {
            return Err(EtmError::Format(format!(
                "alpha is {}x{}, header says {}x{}",
                alpha.rows(),
                alpha.cols(),
                file.k,
                file.d
            )));
        }
        if file.vocab_hash != file.train_meta.vocab_hash {
            return Err(EtmError::Format("vocab_hash disagrees with train_meta".into()));
        }
        TopicModel::new(alpha, rho, file.train_meta)
    }
}
