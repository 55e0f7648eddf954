//! Exact late-interaction retrieval over embedding dumps, plus diagnostics
//! for how the MaxSim operator behaves: length bias of retrieved chunks and
//! the distribution of document-token similarities beyond the top match.
//!
//! Modules follow the pipeline:
//!
//! * [`embedstore`]: manifest + raw `f32` blob storage.
//! * [`scoring`]: MaxSim, score matrices, exhaustive retrieval, TREC runs.
//! * [`metrics`]: qrels and nDCG@k.
//! * [`lengthbias`]: false-positive lengths, per-chunk harm, permutation
//!   baselines.
//! * [`simdist`]: sorted token-similarity curves on failed queries.
//! * [`synthlab`]: synthetic corpora for controlled experiments.
//!
//! Fan-out loops run on rayon when the `parallel` feature is on (default).
//! Results are reduced in a fixed order, so output is identical for any
//! thread count and for sequential builds.

pub mod embedstore;
pub mod error;
pub mod lengthbias;
pub mod metrics;
pub mod par;
pub mod report;
pub mod scoring;
pub mod seed;
pub mod simdist;
pub mod synthlab;

pub use embedstore::{
    merge_stores, open_store, write_store, EmbeddingRef, EmbeddingSet, EmbeddingStore, StoreManifest, Vectors,
};
pub use error::{Error, ErrorClass, Result};
pub use metrics::{evaluate_run, ndcg_at_k, MetricReport, Qrels};
pub use par::Execution;
pub use scoring::{maxsim, rank_of, retrieve, score_matrix, RetrievalRun, ScoredList};
