//! `mtforge`: the deterministic half of a multilingual machine-translation
//! system build.
//!
//! Neural models are treated as external producers of scores, embeddings and
//! tensors. Everything that happens to those artifacts before and after
//! training lives here: bitext filtering, n-gram language models and
//! cross-entropy data selection, subword vocabulary learning, margin-based
//! bitext mining, corpus sharding, mixture-of-experts routing, checkpoint
//! averaging, noisy-channel reranking, BLEU and output postprocessing.

// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod corpus_filter;
pub mod data_select;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mine;
pub mod moe_router;
pub mod ngram_lm;
pub mod postprocess;
pub mod rerank;
pub mod rng;
pub mod shard;
pub mod subword;

pub use error::{Error, Result};

use rayon::prelude::*;

/// Order-preserving parallel map on the current rayon pool. The worker
/// count never changes the output.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}
