//! Query-processing primitives for multimodal neural databases.
//!
//! A query such as *"How many dogs are in the database?"* is answered in three
//! stages over an unordered corpus of image documents:
//!
//! 1. the [`retriever`] narrows the corpus down to a candidate set using only
//!    static, query-independent document embeddings;
//! 2. a [`reasoner`] inspects every candidate and emits an intermediate answer
//!    (a count, a presence flag, or an indecisive token);
//! 3. the [`aggregator`] folds the intermediate answers into the final result.
//!
//! [`eval`] holds the metrics and retrieval regimes used to score a pipeline
//! against corpus ground truth.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the remote reasoner,
//! parallel fan-out and the CLI live in the `mmndb` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod aggregator;
pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod query;
pub mod reasoner;
pub mod retriever;
mod seed;

pub use aggregator::{IndecisivePolicy, QueryAnswer};
pub use corpus::{random_corpus, Document, GroundTruth, MultimodalDatabase, RandomCorpusParams};
pub use embedding::{EmbeddingStore, QueryEncoder, SimilarityMetric};
pub use query::{Query, QueryType};
pub use reasoner::{IntermediateAnswer, Reasoner};
pub use retriever::{RetrievalResult, RetrieverConfig, SelectorModel, Strategy};
