use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::document::Document;
use crate::error::{Error, Result};

/// Lowercase, split on anything that is not alphanumeric, drop one-character tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() > 1)
        .map(str::to_lowercase)
        .collect()
}

/// Dense row-per-document representations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: Array2<f64>,
    doc_ids: Vec<String>,
    /// Rows that came out as all zeros (no usable tokens).
    #[serde(default)]
    pub zero_rows: Vec<usize>,
}

impl FeatureMatrix {
    pub fn new(rows: Array2<f64>, doc_ids: Vec<String>) -> Result<Self> {
        if rows.nrows() != doc_ids.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} document ids",
                rows.nrows(),
                doc_ids.len()
            )));
        }
        if let Some((i, _)) = rows
            .axis_iter(Axis(0))
            .enumerate()
            .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite(format!("feature row {i} ({})", doc_ids[i])));
        }
        let zero_rows = rows
            .axis_iter(Axis(0))
            .enumerate()
            .filter(|(_, r)| r.iter().all(|&v| v == 0.0))
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            rows,
            doc_ids,
            zero_rows,
        })
    }

    /// Features for unnamed rows; ids are the row numbers.
    pub fn from_rows(rows: Array2<f64>) -> Result<Self> {
        let ids = (0..rows.nrows()).map(|i| i.to_string()).collect();
        Self::new(rows, ids)
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.rows.row(i)
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// Copy of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Array2<f64> {
        self.rows.select(Axis(0), indices)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    /// Read a matrix written by [`Self::save`], re-checking its contents.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: Self = serde_json::from_str(&text)?;
        Self::new(raw.rows, raw.doc_ids)
    }
}

/// Smoothed TF-IDF over the `vocab_size` terms with the highest document
/// frequency (ties broken alphabetically), L2-normalized per row.
///
/// `idf(t) = ln((1 + N) / (1 + df(t))) + 1`. Documents with no vocabulary
/// terms keep an all-zero row and are listed in [`FeatureMatrix::zero_rows`].
pub fn vectorize_tfidf(docs: &[Document], vocab_size: usize) -> Result<FeatureMatrix> {
    if docs.is_empty() {
        return Err(Error::Validation("cannot vectorize an empty corpus".into()));
    }
    if vocab_size == 0 {
        return Err(Error::Config("vocab_size must be >= 1".into()));
    }
    let tokenized: Vec<Vec<String>> = docs.iter().map(|d| tokenize(&d.text)).collect();
    let vocab = build_vocabulary(&tokenized, vocab_size);
    if vocab.is_empty() {
        return Err(Error::Validation(
            "vocabulary is empty after tokenization".into(),
        ));
    }
    let n = docs.len() as f64;
    let mut df = vec![0usize; vocab.len()];
    let mut counts = Array2::<f64>::zeros((docs.len(), vocab.len()));
    for (i, tokens) in tokenized.iter().enumerate() {
        for t in tokens {
            if let Some(&j) = vocab.get(t) {
                counts[[i, j]] += 1.0;
            }
        }
        for (j, c) in counts.row(i).iter().enumerate() {
            if *c > 0.0 {
                df[j] += 1;
            }
        }
    }
    let idf: Vec<f64> = df
        .iter()
        .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
        .collect();
    for mut row in counts.axis_iter_mut(Axis(0)) {
        for (v, w) in row.iter_mut().zip(&idf) {
            *v *= w;
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    let ids = docs.iter().map(|d| d.id.clone()).collect();
    let out = FeatureMatrix::new(counts, ids)?;
    if !out.zero_rows.is_empty() {
        log::warn!(
            "{} document(s) share no terms with the vocabulary; kept as zero rows",
            out.zero_rows.len()
        );
    }
    Ok(out)
}

/// Term -> column index for the `size` most document-frequent terms.
pub fn build_vocabulary(tokenized: &[Vec<String>], size: usize) -> HashMap<String, usize> {
    let mut df: HashMap<&str, usize> = HashMap::new();
    for tokens in tokenized {
        let mut uniq: Vec<&str> = tokens.iter().map(String::as_str).collect();
        uniq.sort_unstable();
        uniq.dedup();
        for t in uniq {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut terms: Vec<(&str, usize)> = df.into_iter().collect();
    terms.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    terms
        .into_iter()
        .take(size)
        .enumerate()
        .map(|(i, (t, _))| (t.to_string(), i))
        .collect()
}

/// Token vectors read from a whitespace-separated text file.
#[derive(Debug, Clone)]
pub struct Embeddings {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl Embeddings {
    /// One entry per line: `token v1 v2 ... vd`, with the same `d` on every line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(file), path)
    }

    pub fn parse<R: BufRead>(reader: R, path: &Path) -> Result<Self> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let values = parts
                .map(|p| p.parse::<f64>().map_err(|e| err(format!("{p:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                return Err(err(format!("token {token:?} has no finite vector")));
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(err(format!(
                        "dimension {} differs from earlier entries ({d})",
                        values.len()
                    )))
                }
                _ => {}
            }
            vectors.insert(token.to_string(), values);
        }
        let dim = dim.ok_or_else(|| Error::Validation(format!("{}: no embeddings", path.display())))?;
        Ok(Self { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Each row is the mean of the document's in-vocabulary token vectors
    /// (repeated tokens count repeatedly). Documents without any known token
    /// get a zero row and are listed in `zero_rows`.
    pub fn embed(&self, docs: &[Document]) -> Result<FeatureMatrix> {
        let mut rows = Array2::zeros((docs.len(), self.dim));
        for (i, d) in docs.iter().enumerate() {
            let mut row = rows.row_mut(i);
            let mut hits = 0usize;
            for t in tokenize(&d.text) {
                if let Some(v) = self.vectors.get(&t) {
                    for (r, x) in row.iter_mut().zip(v) {
                        *r += x;
                    }
                    hits += 1;
                }
            }
            if hits > 0 {
                row.mapv_inplace(|v| v / hits as f64);
            }
        }
        let ids = docs.iter().map(|d| d.id.clone()).collect();
        let out = FeatureMatrix::new(rows, ids)?;
        if !out.zero_rows.is_empty() {
            log::warn!(
                "{} document(s) have no in-vocabulary tokens; using zero vectors",
                out.zero_rows.len()
            );
        }
        Ok(out)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>, docs: &[Document]) -> Result<FeatureMatrix> {
    Embeddings::load(path)?.embed(docs)
}
