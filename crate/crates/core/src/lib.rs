//! Zero-shot multi-stage reranking with large language models.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: identifiers, candidates, ranked lists and qrels.
//! - [`io_trec`]: TREC run / qrels files, JSONL corpora and TSV queries.
//! - [`bm25`]: an in-memory BM25 first-stage retriever.
//! - [`prompts`]: the listwise and pointwise completion prompts with token budgeting.
//! - [`backend`]: the completion contract, an OpenAI-compatible HTTP client and a mock oracle.
//! - [`listwise`]: window reranking by generated passage-identifier lists.
//! - [`pointwise`]: per-passage scoring by the probability of answering `True`.
//! - [`window`]: sliding-window progressive reranking of lists longer than one window.
//! - [`metrics`]: nDCG@k and MRR@k evaluation.
//! - [`pipeline`]: stage composition and reciprocal-rank fusion.

pub mod backend;
pub mod bm25;
pub mod error;
pub mod io_trec;
pub mod listwise;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod pointwise;
pub mod prompts;
pub mod window;

pub use error::{Error, Result};
pub use model::{Candidate, Passage, PassageId, Qrels, Query, QueryId, RankedList};
