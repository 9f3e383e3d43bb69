//! Fixed-seed inputs shared by the benchmarks.

use ndarray::Array2;
use pude_core::bench::{generate_text, TextSpec};
use pude_core::Document;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform_rows(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0))
}

/// Seed documents from the positive pool and the unlabeled documents of
/// the default synthetic text corpus.
pub fn text_corpus(seed: u64) -> (Vec<Document>, Vec<Document>) {
    let corpus = generate_text(&TextSpec::default(), seed).expect("default text spec is valid");
    let pool = corpus.pool_rows();
    let mut docs = corpus.documents.expect("text corpora carry documents");
    let seeds = docs.split_off(pool.start);
    docs.truncate(corpus.n_u);
    (seeds, docs)
}
