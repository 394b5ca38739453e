//! Medication annotation with LLM pre-labels: data model, chunking,
//! prompting, output resolution, ensembling, evaluation and statistics.

pub mod analysis;
pub mod chunker;
pub mod ensemble;
pub mod evalsuite;
pub mod model;
pub mod prompting;
pub mod resolvers;
