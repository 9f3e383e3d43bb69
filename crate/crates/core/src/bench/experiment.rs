//! The transductive protocol: train on `LP ∪ U`, label every row of `U`,
//! score against the hidden labels.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{all_positive_f1, best_cutoff, evaluate_transductive, Confusion, EvalReport};
use super::synthetic::{generate_synthetic, generate_text, SyntheticCorpus, SyntheticSpec, TextSpec};
use crate::baselines::{bm25_classify, bm25_rank, default_cutoff, Bm25Index, NnpuConfig, NnpuModel};
use crate::corpus::{
    ingest_jsonl, labels_of, load_embeddings, make_pu_split, select_positives, vectorize_tfidf, Document,
    FeatureMatrix, Label, LabelingConfig, LabelingMechanism, PUDataset,
};
use crate::ebm::{EmConfig, EnergyPair};
use crate::error::{Error, Result};
use crate::kde::{KdeClassifier, KdeConfig};
use crate::nn::{MlpConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "bm25")]
    Bm25,
    #[serde(rename = "nnpu-trans")]
    NnpuTrans,
    #[serde(rename = "pude-kde")]
    PudeKde,
    #[serde(rename = "pude-em")]
    PudeEm,
}

impl Method {
    /// Column order of the comparison table.
    pub const ALL: [Method; 4] = [Method::Bm25, Method::NnpuTrans, Method::PudeKde, Method::PudeEm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bm25 => "bm25",
            Method::NnpuTrans => "nnpu-trans",
            Method::PudeKde => "pude-kde",
            Method::PudeEm => "pude-em",
        }
    }

    /// Column header in tables.
    pub fn title(self) -> &'static str {
        match self {
            Method::Bm25 => "BM25",
            Method::NnpuTrans => "nnPU-trans",
            Method::PudeKde => "puDE-kde",
            Method::PudeEm => "puDE-em",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}; expected bm25, nnpu-trans, pude-kde or pude-em")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSource {
    Tfidf { vocab_size: usize },
    /// Mean word vectors from a text embedding file.
    Embeddings { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Gaussian(SyntheticSpec),
    Text(TextSpec),
    /// A labeled JSONL corpus. Labeled positives are taken from the corpus
    /// itself and every other document is unlabeled.
    Corpus { path: PathBuf, features: FeatureSource },
}

impl DataSource {
    pub fn gaussian() -> Self {
        DataSource::Gaussian(SyntheticSpec::default())
    }

    pub fn name(&self) -> String {
        match self {
            DataSource::Gaussian(_) => "gaussian".into(),
            DataSource::Text(_) => "text".into(),
            DataSource::Corpus { path, .. } => path
                .file_stem()
                .map_or_else(|| "corpus".into(), |s| s.to_string_lossy().into_owned()),
        }
    }
}

/// How labeled positives are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Labeling {
    Scar,
    /// Selection probability proportional to `exp(w . x / temperature)`.
    /// Without weights, `w` is the unit vector between the Gaussian class means.
    Biased {
        #[serde(default = "one")]
        temperature: f64,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
}

fn one() -> f64 {
    1.0
}

impl Labeling {
    pub fn biased() -> Self {
        Labeling::Biased {
            temperature: 1.0,
            weights: None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Labeling::Scar => "scar",
            Labeling::Biased { .. } => "biased",
        }
    }
}

/// nnPU settings; without a class prior the positive fraction of the
/// unlabeled set is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NnpuSettings {
    pub class_prior: Option<f64>,
    pub network: MlpConfig,
    pub train: TrainConfig,
    pub proportional_batching: bool,
    pub balanced_risk: bool,
}

impl Default for NnpuSettings {
    fn default() -> Self {
        let base = NnpuConfig::new(0.5);
        Self {
            class_prior: None,
            network: base.network,
            train: base.train,
            proportional_batching: base.proportional_batching,
            balanced_risk: base.balanced_risk,
        }
    }
}

impl NnpuSettings {
    pub fn resolve(&self, true_prior: Option<f64>) -> Result<NnpuConfig> {
        let class_prior = self
            .class_prior
            .or(true_prior)
            .ok_or_else(|| Error::Config("nnPU needs a class prior and the corpus gives none".into()))?;
        let cfg = NnpuConfig {
            class_prior,
            network: self.network.clone(),
            train: self.train.clone(),
            proportional_batching: self.proportional_batching,
            balanced_risk: self.balanced_risk,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Settings {
    pub k1: f64,
    pub b: f64,
    /// Documents labeled positive; `None` uses [`default_cutoff`].
    pub cutoff: Option<usize>,
}

impl Default for Bm25Settings {
    fn default() -> Self {
        Self {
            k1: 1.2,
            b: 0.75,
            cutoff: None,
        }
    }
}

/// Hyperparameters of every method.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfigs {
    pub kde: KdeConfig,
    pub em: EmConfig,
    pub nnpu: NnpuSettings,
    pub bm25: Bm25Settings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub method: Method,
    pub data: DataSource,
    /// Name used in reports; defaults to the data source name.
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(default)]
    pub lp_count: Option<usize>,
    #[serde(default)]
    pub lp_ratio: Option<f64>,
    pub labeling: Labeling,
    #[serde(default)]
    pub configs: MethodConfigs,
    pub seeds: Vec<u64>,
}

impl ExperimentSpec {
    pub fn new(method: Method, data: DataSource, lp_count: usize, seeds: Vec<u64>) -> Self {
        Self {
            method,
            data,
            dataset: None,
            lp_count: Some(lp_count),
            lp_ratio: None,
            labeling: Labeling::Scar,
            configs: MethodConfigs::default(),
            seeds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.lp_count, self.lp_ratio) {
            (Some(0), None) => return Err(Error::Config("lp_count must be >= 1".into())),
            (Some(_), None) => {}
            (None, Some(r)) if r > 0.0 && r <= 1.0 => {}
            (None, Some(r)) => return Err(Error::Config(format!("lp_ratio must lie in (0, 1], got {r}"))),
            _ => return Err(Error::Config("give exactly one of lp_count and lp_ratio".into())),
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if let Labeling::Biased { temperature, .. } = self.labeling {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
            }
        }
        let c = &self.configs;
        match self.method {
            Method::PudeKde => {
                if !(c.kde.bandwidth > 0.0) {
                    return Err(Error::Config("KDE bandwidth must be > 0".into()));
                }
            }
            Method::PudeEm => c.em.validate()?,
            Method::NnpuTrans => {
                if let Some(p) = c.nnpu.class_prior {
                    if !(p > 0.0 && p < 1.0) {
                        return Err(Error::Config(format!("class prior must lie in (0, 1), got {p}")));
                    }
                }
                c.nnpu.train.validate()?;
            }
            Method::Bm25 => {
                if !(c.bm25.k1 >= 0.0) || !(0.0..=1.0).contains(&c.bm25.b) {
                    return Err(Error::Config("BM25 needs k1 >= 0 and b in [0, 1]".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dataset_name(&self) -> String {
        self.dataset.clone().unwrap_or_else(|| self.data.name())
    }
}

/// Decorrelated sub-seed for one consumer of a run seed (SplitMix64).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) const DATA_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;

/// Loaded data before any positive is labeled.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub features: FeatureMatrix,
    pub labels: Vec<Label>,
    pub documents: Option<Vec<Document>>,
    /// `Some(n_u)` for case-control data: rows `0..n_u` are unlabeled and the
    /// rest form the positive pool.
    pub n_u: Option<usize>,
    pub synthetic: Option<SyntheticSpec>,
}

impl Prepared {
    fn from_synthetic(c: SyntheticCorpus, spec: Option<SyntheticSpec>) -> Self {
        Self {
            features: c.features,
            labels: c.labels,
            documents: c.documents,
            n_u: Some(c.n_u),
            synthetic: spec,
        }
    }

    /// Size of the unlabeled set that a ratio refers to.
    pub fn lp_count_for_ratio(&self, ratio: f64) -> usize {
        match self.n_u {
            Some(n_u) => (ratio * n_u as f64).round() as usize,
            // one corpus: |LP| = r |U| with |LP| + |U| = N
            None => (ratio * self.labels.len() as f64 / (1.0 + ratio)).round() as usize,
        }
    }
}

pub fn prepare_data(source: &DataSource, seed: u64) -> Result<Prepared> {
    match source {
        DataSource::Gaussian(spec) => {
            Ok(Prepared::from_synthetic(generate_synthetic(spec, seed)?, Some(spec.clone())))
        }
        DataSource::Text(spec) => Ok(Prepared::from_synthetic(generate_text(spec, seed)?, None)),
        DataSource::Corpus { path, features } => {
            let docs = ingest_jsonl(path)?;
            let labels = labels_of(&docs)?;
            let features = match features {
                FeatureSource::Tfidf { vocab_size } => vectorize_tfidf(&docs, *vocab_size)?,
                FeatureSource::Embeddings { path } => load_embeddings(path, &docs)?,
            };
            Ok(Prepared {
                features,
                labels,
                documents: Some(docs),
                n_u: None,
                synthetic: None,
            })
        }
    }
}

/// A split with the documents aligned to its feature rows.
#[derive(Debug)]
pub struct Split {
    pub dataset: PUDataset,
    pub documents: Option<Vec<Document>>,
}

fn labeling_config(labeling: &Labeling, data: &Prepared, lp_count: usize, seed: u64) -> Result<LabelingConfig> {
    Ok(match labeling {
        Labeling::Scar => LabelingConfig::scar(lp_count, seed),
        Labeling::Biased { temperature, weights } => {
            let w = match (weights, &data.synthetic) {
                (Some(w), _) => w.clone(),
                (None, Some(spec)) => spec.discriminative_direction(),
                (None, None) => {
                    return Err(Error::Config(
                        "biased labeling needs explicit weights for non-Gaussian data".into(),
                    ))
                }
            };
            LabelingConfig {
                mechanism: LabelingMechanism::Biased {
                    weights: w,
                    temperature: *temperature,
                },
                target_lp_count: Some(lp_count),
                seed,
            }
        }
    })
}

/// Label `lp_count` positives. Case-control data keeps its whole unlabeled
/// sample and drops the pool rows that were not picked.
pub fn build_split(data: &Prepared, labeling: &Labeling, lp_count: usize, seed: u64) -> Result<Split> {
    let cfg = labeling_config(labeling, data, lp_count, seed)?;
    let Some(n_u) = data.n_u else {
        let dataset = make_pu_split(data.features.clone(), &data.labels, &cfg)?;
        return Ok(Split {
            dataset,
            documents: data.documents.clone(),
        });
    };
    let pool: Vec<usize> = (n_u..data.labels.len()).collect();
    let chosen = select_positives(&data.features, &pool, &cfg)?;
    let rows: Vec<usize> = (0..n_u).chain(chosen.iter().copied()).collect();
    let ids = rows.iter().map(|&i| data.features.doc_ids()[i].clone()).collect();
    let features = FeatureMatrix::new(data.features.select(&rows), ids)?;
    let labels = rows.iter().map(|&i| data.labels[i]).collect();
    let documents = data.documents.as_ref().map(|d| rows.iter().map(|&i| d[i].clone()).collect());
    let dataset = PUDataset::from_partition(features, (n_u..rows.len()).collect(), (0..n_u).collect(), Some(labels), seed)?;
    Ok(Split { dataset, documents })
}

/// Labels and scores for the unlabeled rows, in `u_indices` order.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub predictions: Vec<Label>,
    pub scores: Vec<f64>,
    pub details: Vec<(String, f64)>,
}

/// Train `method` on the split's training view and label the unlabeled rows.
pub fn train_and_predict(method: Method, split: &Split, configs: &MethodConfigs, seed: u64) -> Result<MethodOutput> {
    let ds = &split.dataset;
    let view = ds.train_view();
    let u = view.u_rows();
    let mut details = Vec::new();
    let (predictions, scores) = match method {
        Method::PudeKde => {
            let clf = KdeClassifier::fit(&view, &configs.kde, seed)?;
            let s = clf.score(&u)?;
            (s.iter().map(|&v| Label::from_bool(v >= clf.threshold)).collect(), s.to_vec())
        }
        Method::PudeEm => {
            let pair = EnergyPair::fit(&view, &configs.em, seed)?;
            if let (Some(first), Some(last)) = (pair.trace.first(), pair.trace.last()) {
                details.push(("loss_first_epoch".into(), first.total));
                details.push(("loss_last_epoch".into(), last.total));
            }
            let s = pair.score(&u)?;
            (s.iter().map(|&v| Label::from_bool(v >= 0.0)).collect(), s.to_vec())
        }
        Method::NnpuTrans => {
            let cfg = configs.nnpu.resolve(ds.meta().unlabeled_prior)?;
            details.push(("class_prior".into(), cfg.class_prior));
            let model = NnpuModel::fit(&view, &cfg, seed)?;
            let min_clamped = model
                .trace
                .iter()
                .map(|s| s.risk.negative_clamped)
                .fold(f64::INFINITY, f64::min);
            details.push(("min_clamped_negative_risk".into(), min_clamped));
            let s = model.score(&u)?;
            (s.iter().map(|&v| Label::from_bool(v >= 0.0)).collect(), s.to_vec())
        }
        Method::Bm25 => {
            let docs = split
                .documents
                .as_ref()
                .ok_or_else(|| Error::Validation("BM25 needs document text; this data source has none".into()))?;
            let seeds: Vec<Document> = ds.lp_indices().iter().map(|&i| docs[i].clone()).collect();
            let pool: Vec<Document> = ds.u_indices().iter().map(|&i| docs[i].clone()).collect();
            let index = Bm25Index::with_params(&pool, configs.bm25.k1, configs.bm25.b)?;
            let ranked = bm25_rank(&seeds, &index)?;
            let k = configs.bm25.cutoff.unwrap_or_else(|| default_cutoff(&ranked, seeds.len()));
            details.push(("cutoff".into(), k as f64));
            let position: std::collections::HashMap<&str, usize> =
                pool.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
            let mut predictions = vec![Label::Negative; pool.len()];
            let mut scores = vec![0.0; pool.len()];
            for ((id, label), (_, s)) in bm25_classify(&ranked, k).into_iter().zip(&ranked) {
                let i = position[id.as_str()];
                predictions[i] = label;
                scores[i] = *s;
            }
            (predictions, scores)
        }
    };
    Ok(MethodOutput {
        predictions,
        scores,
        details,
    })
}

fn confusion_f1(pred: &[Label], truth: &[Label]) -> Result<f64> {
    Ok(100.0 * Confusion::from_labels(pred, truth)?.f1())
}

/// One full cell: train, predict, then evaluate. Fails if ground truth was
/// read before evaluation.
pub fn run_cell(spec: &ExperimentSpec, data: &Prepared, seed: u64) -> Result<EvalReport> {
    let lp_count = match (spec.lp_count, spec.lp_ratio) {
        (Some(k), _) => k,
        (None, Some(r)) => data.lp_count_for_ratio(r),
        (None, None) => return Err(Error::Config("no lp setting".into())),
    };
    if lp_count == 0 {
        return Err(Error::Config(format!("lp_ratio {:?} gives no labeled positives", spec.lp_ratio)));
    }
    let split = build_split(data, &spec.labeling, lp_count, derive_seed(seed, SPLIT_STREAM))?;
    let ds = &split.dataset;
    let start = Instant::now();
    let out = train_and_predict(spec.method, &split, &spec.configs, derive_seed(seed, TRAIN_STREAM))?;
    let elapsed = start.elapsed().as_secs_f64();
    let accesses = ds.hidden_label_accesses();
    if accesses != 0 {
        return Err(Error::State(format!(
            "ground truth was read {accesses} time(s) before evaluation"
        )));
    }
    let mut report = evaluate_transductive(&out.predictions, Some(&out.scores), ds)?;
    report.method = spec.method.name().into();
    report.dataset = spec.dataset_name();
    report.labeling = spec.labeling.name().into();
    report.seed = seed;
    report.hidden_label_accesses_during_training = accesses;
    report.wall_clock_secs = elapsed.max(f64::MIN_POSITIVE);
    report.details.extend(out.details);
    let meta = ds.meta();
    if let Some(n_up) = meta.n_up {
        report
            .details
            .insert("all_positive_f1".into(), all_positive_f1(n_up, meta.n_u));
    }
    if spec.method == Method::Bm25 {
        // ranking quality at the best possible cutoff, reported apart from F1
        let truth = ds.reveal_unlabeled_truth()?;
        let ids = ds.train_view().u_ids();
        let mut order: Vec<usize> = (0..truth.len()).collect();
        order.sort_by(|&a, &b| out.scores[b].total_cmp(&out.scores[a]).then_with(|| ids[a].cmp(ids[b])));
        let ranked: Vec<Label> = order.iter().map(|&i| truth[i]).collect();
        let (k, f1) = best_cutoff(&ranked);
        report.details.insert("oracle_cutoff".into(), k as f64);
        report.details.insert("oracle_cutoff_f1".into(), 100.0 * f1);
    }
    if let Some(synth) = &data.synthetic {
        let truth = ds.reveal_unlabeled_truth()?;
        let bayes = synth.posterior().bayes_predict(&ds.train_view().u_rows());
        report.details.insert("bayes_f1".into(), confusion_f1(&bayes, &truth)?);
    }
    Ok(report)
}

/// One report per seed. Data, split and training randomness all derive
/// from the seed.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<EvalReport>> {
    spec.validate()?;
    spec.seeds
        .iter()
        .map(|&seed| {
            let data = prepare_data(&spec.data, derive_seed(seed, DATA_STREAM))
                .map_err(|e| e.context(format!("loading {} (seed {seed})", spec.dataset_name())))?;
            run_cell(spec, &data, seed)
                .map_err(|e| e.context(format!("{} on {} (seed {seed})", spec.method, spec.dataset_name())))
        })
        .collect()
}

/// Several methods on shared data: every seed loads the data once.
pub fn run_methods(spec: &ExperimentSpec, methods: &[Method]) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    for &seed in &spec.seeds {
        let data = prepare_data(&spec.data, derive_seed(seed, DATA_STREAM))
            .map_err(|e| e.context(format!("loading {} (seed {seed})", spec.dataset_name())))?;
        for &method in methods {
            let s = ExperimentSpec {
                method,
                ..spec.clone()
            };
            s.validate()?;
            reports.push(
                run_cell(&s, &data, seed)
                    .map_err(|e| e.context(format!("{method} on {} (seed {seed})", spec.dataset_name())))?,
            );
        }
    }
    Ok(reports)
}
