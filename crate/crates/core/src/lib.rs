//! Corpus-to-topics engine: groups tweets per user into documents, trains
//! CBOW word embeddings with negative sampling, averages them into document
//! vectors, picks a cluster count with the gap statistic, clusters with
//! k-means, projects to 2D with PCA, and reports per-cluster summaries.

pub mod artifact;
pub mod cluster;
pub mod config;
pub mod docmodel;
pub mod error;
pub mod gapstat;
pub mod ingest;
pub mod matrix;
pub mod pipeline;
pub mod project;
pub mod report;
pub mod seeding;
pub mod tokenize;
pub mod trainer;
pub mod vecmath;
pub mod vocab;

pub use error::{Error, Result};
