//! Comparison methods: a transductive non-negative PU classifier and a BM25
//! ranking built from the seed documents.

mod bm25;
mod nnpu;

pub use bm25::{bm25_classify, bm25_rank, build_query, default_cutoff, Bm25Index, Posting, QUERY_TERMS};
pub use nnpu::{
    nnpu_risk, proportional_counts, sigmoid_loss, train_nnpu_trans, NnpuConfig, NnpuModel, NnpuRisk, NnpuStep,
};
