use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Document, Label};
use crate::error::{Error, Result};

/// Query terms kept from the seed documents.
pub const QUERY_TERMS: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: usize,
    pub tf: u32,
}

/// Inverted index with BM25 parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    pub k1: f64,
    pub b: f64,
    pub doc_ids: Vec<String>,
    pub doc_lengths: Vec<u32>,
    pub avg_doc_length: f64,
    pub postings: BTreeMap<String, Vec<Posting>>,
}

impl Bm25Index {
    pub fn build(docs: &[Document]) -> Result<Self> {
        Self::with_params(docs, 1.2, 0.75)
    }

    pub fn with_params(docs: &[Document], k1: f64, b: f64) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Validation("cannot index an empty corpus".into()));
        }
        if !(k1 >= 0.0) || !(0.0..=1.0).contains(&b) {
            return Err(Error::Config(format!("invalid BM25 parameters k1={k1}, b={b}")));
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            let tokens = tokenize(&d.text);
            doc_lengths.push(tokens.len() as u32);
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *counts.entry(t).or_default() += 1;
            }
            for (t, tf) in counts {
                postings.entry(t).or_default().push(Posting { doc: i, tf });
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        if total == 0 {
            return Err(Error::Validation("no document in the corpus has a usable token".into()));
        }
        Ok(Self {
            k1,
            b,
            doc_ids: docs.iter().map(|d| d.id.clone()).collect(),
            avg_doc_length: total as f64 / docs.len() as f64,
            doc_lengths,
            postings,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`, always positive.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 score of every indexed document for `(term, query weight)` pairs.
    pub fn score_all(&self, query: &[(String, f64)]) -> Vec<f64> {
        let mut scores = vec![0.0; self.len()];
        for (term, qw) in query {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for p in list {
                let tf = p.tf as f64;
                let len = self.doc_lengths[p.doc] as f64;
                let norm = self.k1 * (1.0 - self.b + self.b * len / self.avg_doc_length);
                scores[p.doc] += qw * idf * tf * (self.k1 + 1.0) / (tf + norm);
            }
        }
        scores
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Query from the concatenated seeds: the `QUERY_TERMS` terms with the
/// highest `tf * idf`, weighted by their seed frequency. Ties go to the
/// alphabetically first term.
pub fn build_query(seeds: &[Document], index: &Bm25Index) -> Result<Vec<(String, f64)>> {
    let mut tf: HashMap<String, usize> = HashMap::new();
    for d in seeds {
        for t in tokenize(&d.text) {
            *tf.entry(t).or_default() += 1;
        }
    }
    if tf.is_empty() {
        return Err(Error::Validation("seed documents yield an empty query".into()));
    }
    let n = index.len() as f64;
    let mut terms: Vec<(String, usize, f64)> = tf
        .into_iter()
        .map(|(t, c)| {
            let idf = ((1.0 + n) / (1.0 + index.doc_freq(&t) as f64)).ln() + 1.0;
            let w = c as f64 * idf;
            (t, c, w)
        })
        .collect();
    terms.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    terms.truncate(QUERY_TERMS);
    Ok(terms.into_iter().map(|(t, c, _)| (t, c as f64)).collect())
}

/// Every indexed document with its score, best first; equal scores are
/// ordered by document id.
pub fn bm25_rank(seeds: &[Document], index: &Bm25Index) -> Result<Vec<(String, f64)>> {
    if seeds.is_empty() {
        return Err(Error::Validation("BM25 ranking needs at least one seed document".into()));
    }
    let query = build_query(seeds, index)?;
    let scores = index.score_all(&query);
    let mut ranked: Vec<(String, f64)> = index.doc_ids.iter().cloned().zip(scores).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Top `k` of a ranking labeled positive, the rest negative, in rank order.
pub fn bm25_classify(ranked: &[(String, f64)], k: usize) -> Vec<(String, Label)> {
    ranked
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (id.clone(), Label::from_bool(i < k)))
        .collect()
}

/// Default cutoff: documents with a positive score, at most `3 * n_lp`.
pub fn default_cutoff(ranked: &[(String, f64)], n_lp: usize) -> usize {
    ranked.iter().filter(|(_, s)| *s > 0.0).count().min(3 * n_lp)
}
