//! Synthetic corpora with known ground truth.
//!
//! Both generators follow the case-control design: a fixed unlabeled sample
//! drawn from the full marginal plus a separate pool of positives from which
//! the labeled set is selected.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};
use serde::{Deserialize, Serialize};

use crate::corpus::{vectorize_tfidf, Document, FeatureMatrix, Label};
use crate::error::{Error, Result};
use crate::nn::sigmoid;

/// Two isotropic Gaussian classes sharing the standard deviation `sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub n_u: usize,
    pub prior: f64,
    pub mu_pos: Vec<f64>,
    pub mu_neg: Vec<f64>,
    pub sigma: f64,
    /// Size of the positive pool; `None` means `round(prior * n_u)`.
    pub positive_pool: Option<usize>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dim: 2,
            n_u: 2000,
            prior: 0.3,
            mu_pos: vec![1.5, 0.0],
            mu_neg: vec![-1.5, 0.0],
            sigma: 1.0,
            positive_pool: None,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_u == 0 {
            return Err(Error::Config("dim and n_u must be >= 1".into()));
        }
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return Err(Error::Config(format!("prior must lie in (0, 1), got {}", self.prior)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.mu_pos.len() != self.dim || self.mu_neg.len() != self.dim {
            return Err(Error::Config(format!("class means must have length {}", self.dim)));
        }
        if self.mu_pos.iter().chain(&self.mu_neg).any(|v| !v.is_finite()) {
            return Err(Error::Config("class means must be finite".into()));
        }
        if self.mu_pos == self.mu_neg {
            return Err(Error::Config("class means must differ".into()));
        }
        if self.positive_pool == Some(0) {
            return Err(Error::Config("positive_pool must be >= 1".into()));
        }
        Ok(())
    }

    pub fn pool_size(&self) -> usize {
        self.positive_pool
            .unwrap_or_else(|| ((self.prior * self.n_u as f64).round() as usize).max(1))
    }

    pub fn posterior(&self) -> GaussianPosterior {
        GaussianPosterior::new(&self.mu_pos, &self.mu_neg, self.sigma, self.prior)
    }

    /// Unit vector from the negative to the positive mean.
    pub fn discriminative_direction(&self) -> Vec<f64> {
        let d: Vec<f64> = self.mu_pos.iter().zip(&self.mu_neg).map(|(p, n)| p - n).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        d.into_iter().map(|v| v / norm).collect()
    }
}

/// Closed-form `P(Y = +1 | x)` for two Gaussians with a shared isotropic
/// covariance: `sigmoid(w . x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl GaussianPosterior {
    pub fn new(mu_pos: &[f64], mu_neg: &[f64], sigma: f64, prior: f64) -> Self {
        let s2 = sigma * sigma;
        let weights = mu_pos.iter().zip(mu_neg).map(|(p, n)| (p - n) / s2).collect();
        let sq = |m: &[f64]| m.iter().map(|v| v * v).sum::<f64>();
        let bias = (sq(mu_neg) - sq(mu_pos)) / (2.0 * s2) + (prior / (1.0 - prior)).ln();
        Self { weights, bias }
    }

    pub fn at(&self, x: ArrayView1<f64>) -> f64 {
        let z: f64 = x.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>() + self.bias;
        sigmoid(z)
    }

    pub fn posterior(&self, rows: &Array2<f64>) -> Array1<f64> {
        rows.rows().into_iter().map(|r| self.at(r)).collect()
    }

    /// The Bayes decision `P(Y = +1 | x) >= 1/2` per row.
    pub fn bayes_predict(&self, rows: &Array2<f64>) -> Vec<Label> {
        self.posterior(rows).iter().map(|&p| Label::from_bool(p >= 0.5)).collect()
    }
}

/// A generated corpus. Rows `0..n_u` are the unlabeled sample, the rest
/// form the positive pool.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub features: FeatureMatrix,
    pub labels: Vec<Label>,
    pub n_u: usize,
    pub documents: Option<Vec<Document>>,
    pub posterior: Option<GaussianPosterior>,
}

impl SyntheticCorpus {
    pub fn unlabeled_rows(&self) -> std::ops::Range<usize> {
        0..self.n_u
    }

    pub fn pool_rows(&self) -> std::ops::Range<usize> {
        self.n_u..self.labels.len()
    }
}

fn gaussian_row(mean: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    mean.iter()
        .map(|m| {
            let z: f64 = StandardNormal.sample(rng);
            m + sigma * z
        })
        .collect()
}

/// Unlabeled labels are Bernoulli(prior); pool rows are all positive.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = spec.pool_size();
    let n = spec.n_u + pool;
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let positive = i >= spec.n_u || rng.random_bool(spec.prior);
        let mean = if positive { &spec.mu_pos } else { &spec.mu_neg };
        data.extend(gaussian_row(mean, spec.sigma, &mut rng));
        labels.push(Label::from_bool(positive));
    }
    let rows = Array2::from_shape_vec((n, spec.dim), data).map_err(|e| Error::Shape(e.to_string()))?;
    let ids = (0..n)
        .map(|i| if i < spec.n_u { format!("u{i:06}") } else { format!("p{:06}", i - spec.n_u) })
        .collect();
    Ok(SyntheticCorpus {
        features: FeatureMatrix::new(rows, ids)?,
        labels,
        n_u: spec.n_u,
        documents: None,
        posterior: Some(spec.posterior()),
    })
}

/// Bag-of-words documents. Every document mixes Zipf-distributed background
/// words with words of its own topic; topic 0 is the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextSpec {
    pub n_u: usize,
    /// Positives among the unlabeled documents (exact).
    pub n_up: usize,
    pub positive_pool: usize,
    pub n_topics: usize,
    pub background_vocab: usize,
    pub topic_vocab: usize,
    /// Consecutive topics share this many words, so neighbors overlap.
    pub topic_overlap: usize,
    pub min_length: usize,
    pub max_length: usize,
    /// Probability that a token is a topic word.
    pub topic_rate: f64,
    pub zipf_exponent: f64,
    /// TF-IDF vocabulary size.
    pub vocab_size: usize,
}

impl Default for TextSpec {
    fn default() -> Self {
        Self {
            n_u: 2000,
            n_up: 400,
            positive_pool: 400,
            n_topics: 8,
            background_vocab: 300,
            topic_vocab: 30,
            topic_overlap: 10,
            min_length: 30,
            max_length: 90,
            topic_rate: 0.12,
            zipf_exponent: 1.1,
            vocab_size: 200,
        }
    }
}

impl TextSpec {
    /// A 10012-document pool with 1844 positives.
    pub fn topic1() -> Self {
        Self {
            n_u: 10012,
            n_up: 1844,
            positive_pool: 400,
            ..Self::default()
        }
    }

    /// Counts of the Covid corpus; the pool can supply `|LP| = |U|`.
    pub fn covid() -> Self {
        Self {
            n_u: 4722,
            n_up: 2310,
            positive_pool: 4722,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_u == 0 || self.n_up > self.n_u || self.positive_pool == 0 {
            return Err(Error::Config("need n_u >= 1, n_up <= n_u and a non-empty pool".into()));
        }
        if self.n_topics < 2 || self.topic_vocab == 0 || self.background_vocab == 0 {
            return Err(Error::Config("need >= 2 topics and non-empty vocabularies".into()));
        }
        if self.topic_overlap >= self.topic_vocab {
            return Err(Error::Config("topic_overlap must be below topic_vocab".into()));
        }
        if self.min_length == 0 || self.min_length > self.max_length {
            return Err(Error::Config("document lengths must satisfy 1 <= min <= max".into()));
        }
        if !(0.0..=1.0).contains(&self.topic_rate) || !(self.zipf_exponent > 0.0) {
            return Err(Error::Config("topic_rate must lie in [0, 1] and zipf_exponent be > 0".into()));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be >= 1".into()));
        }
        Ok(())
    }

    fn topic_word(&self, topic: usize, j: usize) -> String {
        // the last `topic_overlap` words of a topic are the first of the next
        let stride = self.topic_vocab - self.topic_overlap;
        format!("t{}", topic * stride + j)
    }

    fn document(&self, topic: usize, background: &Zipf<f64>, rng: &mut ChaCha8Rng) -> String {
        let len = rng.random_range(self.min_length..=self.max_length);
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            if rng.random_bool(self.topic_rate) {
                words.push(self.topic_word(topic, rng.random_range(0..self.topic_vocab)));
            } else {
                let r = background.sample(rng) as usize;
                words.push(format!("w{r}"));
            }
        }
        words.join(" ")
    }
}

/// Documents plus TF-IDF features over the unlabeled sample and the pool.
pub fn generate_text(spec: &TextSpec, seed: u64) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background =
        Zipf::new(spec.background_vocab as f64, spec.zipf_exponent).map_err(|e| Error::Config(e.to_string()))?;
    let mut positive_slots = vec![false; spec.n_u];
    for i in rand::seq::index::sample(&mut rng, spec.n_u, spec.n_up) {
        positive_slots[i] = true;
    }
    let n = spec.n_u + spec.positive_pool;
    let mut docs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (positive, id) = if i < spec.n_u {
            (positive_slots[i], format!("u{i:06}"))
        } else {
            (true, format!("p{:06}", i - spec.n_u))
        };
        let topic = if positive { 0 } else { rng.random_range(1..spec.n_topics) };
        let text = spec.document(topic, &background, &mut rng);
        let label = Label::from_bool(positive);
        docs.push(Document::new(id, text, Some(label)));
        labels.push(label);
    }
    let features = vectorize_tfidf(&docs, spec.vocab_size)?;
    Ok(SyntheticCorpus {
        features,
        labels,
        n_u: spec.n_u,
        documents: Some(docs),
        posterior: None,
    })
}
