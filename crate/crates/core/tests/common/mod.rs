#![allow(dead_code)]

use std::collections::HashSet;

use topicview_core::corpus::{
    build_vocabulary, session_documents, to_bow, BowVector, DocumentUnit, VocabFilters, Vocabulary,
};
use topicview_core::embeddings::{train_sgns, EmbeddingMatrix, SgnsConfig};
use topicview_core::etm::{train_etm, EtmConfig, TopicModel};
use topicview_core::synthetic::{planted_corpus, PlantedCorpus, PlantedSpec};

pub const NO_FILTERS: VocabFilters = VocabFilters {
    min_count: 1,
    max_doc_ratio: 1.0,
};

pub struct Planted {
    pub corpus: PlantedCorpus,
    pub docs: Vec<Vec<String>>,
    pub vocab: Vocabulary,
    pub bows: Vec<BowVector>,
    pub rho: EmbeddingMatrix,
}

pub fn sgns_config() -> SgnsConfig {
    SgnsConfig {
        dim: 16,
        epochs: 10,
        seed: 3,
        ..SgnsConfig::default()
    }
}

pub fn planted(spec: &PlantedSpec) -> Planted {
    let corpus = planted_corpus(spec);
    let docs = session_documents(&corpus.sessions, DocumentUnit::Session, &HashSet::new());
    // every planted word sits in about half the documents, so the document
    // ratio cap is disabled here
    let vocab = build_vocabulary(&docs, NO_FILTERS).unwrap();
    let ids: Vec<Vec<usize>> = docs.iter().map(|d| vocab.encode(d)).collect();
    let rho = train_sgns(&ids, &vocab, &sgns_config()).unwrap().embeddings;
    let bows = docs.iter().map(|d| to_bow(d, &vocab)).collect();
    Planted {
        corpus,
        docs,
        vocab,
        bows,
        rho,
    }
}

pub fn etm_config(k: usize) -> EtmConfig {
    EtmConfig {
        num_topics: k,
        seed: 5,
        ..EtmConfig::default()
    }
}

pub fn trained(p: &Planted, k: usize) -> TopicModel {
    train_etm(&p.bows, &p.rho, &etm_config(k)).unwrap()
}
