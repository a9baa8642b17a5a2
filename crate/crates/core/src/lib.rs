//! Topic modeling over dialogue transcripts.
//!
//! The pipeline runs transcripts through [`corpus`] (tokenization, vocabulary,
//! bag-of-words), trains word vectors with [`embeddings`], fits an embedded
//! topic model with [`etm`], and scores every turn of a session against every
//! topic with [`temporal`]. [`metrics`] evaluates topic quality and
//! [`imagegen`] turns session text into image-generation requests.

pub mod corpus;
pub mod embeddings;
pub mod etm;
pub mod imagegen;
pub mod linalg;
pub mod metrics;
pub mod synthetic;
pub mod temporal;

pub use corpus::{Session, Speaker, Turn, Vocabulary};
pub use embeddings::EmbeddingMatrix;
pub use etm::TopicModel;
pub use temporal::TopicScoreSeries;
