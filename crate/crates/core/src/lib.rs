//! Design-logic guided synthesis of multidisciplinary reasoning questions.
//!
//! The crate is organized by pipeline concern:
//!
//! - [`model`]: record schemas, label vocabularies and validation.
//! - [`gateway`]: chat and embedding access with caching, retries and a mock.
//! - [`curation`]: book segmentation, web scoring, quotas and sampling.
//! - [`qbank`]: question-bank labeling, k-means, silhouette search and
//!   stratified selection.
//! - [`logic`]: design-logic extraction and graph-based deduplication.
//! - [`matcher`]: cosine retrieval and question/response synthesis.
//! - [`postproc`]: MinHash near-duplicate removal and n-gram decontamination.
//! - [`analytics`]: distribution and diversity statistics.
//! - [`pipeline`]: staged, resumable orchestration.

pub mod analytics;
pub mod context;
pub mod curation;
pub mod dsu;
pub mod gateway;
pub mod logic;
pub mod matcher;
pub mod model;
pub mod pipeline;
pub mod postproc;
pub mod prompts;
pub mod qbank;
pub mod vector;
