//! Neural entity summarization over RDF knowledge graphs.
//!
//! Ingestion of ESBM-layout corpora, TransE pretraining, a BiLSTM feature
//! extractor with a multi-aspect, multi-user attention simulator, training
//! with five-fold cross-validation, and F-measure / MAP evaluation.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to one type.

pub mod config;
pub mod eval;
pub mod extractor;
pub mod ingest;
pub mod lstm;
pub mod model;
pub mod numeric;
pub mod pipeline;
mod scalar;
pub mod simulator;
pub mod synthetic;
pub mod trainer;
pub mod transe;

pub use scalar::Scalar;

pub type SummaryModelF64 = model::SummaryModel<f64>;
pub type SummaryModelF32 = model::SummaryModel<f32>;
pub type GraphEmbeddingsF64 = transe::GraphEmbeddings<f64>;
pub type GraphEmbeddingsF32 = transe::GraphEmbeddings<f32>;
pub type ParamStoreF64 = numeric::ParamStore<f64>;
pub type ParamStoreF32 = numeric::ParamStore<f32>;
pub type GraphF64<'a> = numeric::Graph<'a, f64>;
pub type GraphF32<'a> = numeric::Graph<'a, f32>;
