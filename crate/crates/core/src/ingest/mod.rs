//! Corpus ingestion: N-Triples parsing, the ESBM-layout loader, word
//! extraction, vocabularies and gold attention.

mod dataset;
mod rdf;
mod vocab;

use thiserror::Error;

pub use dataset::{
    gold_attention, load_dataset, load_dataset_with, parse_entity_list, Dataset, EntityDescription, EntityDump,
    EntityListEntry, GoldAnnotation, Manifest, Source,
};
pub use rdf::{parse_ntriples, Term, Triple};
pub use vocab::{build_vocab, extract_word, normalize_literal, Vocabulary, OOV_TOKEN};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("N-Triples parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("entity list line {line}: {message}")]
    EntityList { line: usize, message: String },
    #[error("{}cannot load {path}: {message}", entity.as_ref().map(|e| format!("entity {e}: ")).unwrap_or_default())]
    Load {
        entity: Option<String>,
        path: String,
        message: String,
    },
    #[error("entity {entity}: {message}")]
    Integrity { entity: String, message: String },
    #[error("gold counts are all zero")]
    EmptyGold,
}
