//! Two-stage tool retrieval for LLM function calling.
//!
//! A fast first stage prunes the tool catalog to `N` candidates, either by
//! cosine search over usage-driven tool embeddings (Tool2Vec) or with a
//! multi-label classifier over all tools. A second-stage refiner re-scores
//! each candidate against the query and keeps the final `K`.
//!
//! Modules:
//! - [`corpus`]: tools, queries, JSON Lines I/O and splits.
//! - [`embed`]: hashed n-gram featurizer, Tool2Vec, description embeddings,
//!   triplet-trained projection.
//! - [`retrieve`]: exact cosine top-N and the multi-label classifier.
//! - [`refine`]: the candidate refiner and the two-stage pipeline.
//! - [`train`]: losses, seeded SGD and the finite-difference gradient checker.
//! - [`eval`]: Recall@K, nDCG@K and failure analyses.
//! - [`datagen`]: LLM-driven synthetic dataset generation.

pub mod artifact;
pub mod corpus;
pub mod datagen;
pub mod embed;
pub mod eval;
pub mod refine;
pub mod retrieve;
pub mod synthetic;
pub mod train;

pub use corpus::{Corpus, CorpusError, QueryRecord, Split, ToolRecord};
pub use embed::{EmbeddingMatrix, EmbeddingProvider, Featurizer, FeaturizerConfig, MatrixKind};
pub use eval::{EvalConfig, EvalReport};
pub use refine::{Artifacts, PipelineConfig, RefinerModel};
pub use retrieve::{Candidate, Method, MlcModel, RetrievalResult, Stage};
pub use train::{LossReport, TrainConfig};
