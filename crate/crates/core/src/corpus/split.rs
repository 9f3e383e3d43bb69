//! Positive-unlabeled splits and the wall between training and ground truth.
//!
//! A [`PUDataset`] owns the features, the labeled-positive / unlabeled
//! partition and the hidden labels. Training code gets a [`TrainView`], which
//! carries feature rows and document ids only. Ground truth leaves the dataset
//! through [`PUDataset::reveal_unlabeled_truth`], which counts every call.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::document::Label;
use super::features::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelingMechanism {
    /// Every positive is equally likely to be labeled.
    Scar { label_frequency: f64 },
    /// Positives are labeled with probability proportional to
    /// `exp(w . x / temperature)`, sampled without replacement.
    Biased { weights: Vec<f64>, temperature: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingConfig {
    pub mechanism: LabelingMechanism,
    /// Number of positives to label. For SCAR, `None` means
    /// `round(label_frequency * positives)`; BIASED requires a count.
    #[serde(default)]
    pub target_lp_count: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl LabelingConfig {
    pub fn scar(target_lp_count: usize, seed: u64) -> Self {
        Self {
            mechanism: LabelingMechanism::Scar {
                label_frequency: 1.0,
            },
            target_lp_count: Some(target_lp_count),
            seed,
        }
    }

    pub fn scar_frequency(label_frequency: f64, seed: u64) -> Self {
        Self {
            mechanism: LabelingMechanism::Scar { label_frequency },
            target_lp_count: None,
            seed,
        }
    }

    pub fn biased(weights: Vec<f64>, temperature: f64, target_lp_count: usize, seed: u64) -> Self {
        Self {
            mechanism: LabelingMechanism::Biased {
                weights,
                temperature,
            },
            target_lp_count: Some(target_lp_count),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.mechanism {
            LabelingMechanism::Scar { label_frequency } => {
                if !(*label_frequency > 0.0 && *label_frequency <= 1.0) {
                    return Err(Error::Config(format!(
                        "label frequency must lie in (0, 1], got {label_frequency}"
                    )));
                }
            }
            LabelingMechanism::Biased {
                weights,
                temperature,
            } => {
                if !(*temperature > 0.0) || !temperature.is_finite() {
                    return Err(Error::Config(format!(
                        "temperature must be > 0, got {temperature}"
                    )));
                }
                if weights.iter().any(|w| !w.is_finite()) {
                    return Err(Error::Config("bias weights must be finite".into()));
                }
                if self.target_lp_count.is_none() {
                    return Err(Error::Config(
                        "biased labeling needs target_lp_count".into(),
                    ));
                }
            }
        }
        if self.target_lp_count == Some(0) {
            return Err(Error::Config("target_lp_count must be >= 1".into()));
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self.mechanism {
            LabelingMechanism::Scar { .. } => "scar",
            LabelingMechanism::Biased { .. } => "biased",
        }
    }
}

/// Counts derived from ground truth at construction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub n_total: usize,
    pub n_lp: usize,
    pub n_u: usize,
    pub n_up: Option<usize>,
    pub n_un: Option<usize>,
    /// `(|LP| + n_up) / total`.
    pub true_prior: Option<f64>,
    /// `n_up / n_u`: the positive fraction of the unlabeled set.
    pub unlabeled_prior: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Default)]
struct HiddenLabels {
    labels: Option<Vec<Label>>,
    accesses: AtomicUsize,
}

#[derive(Debug)]
pub struct PUDataset {
    features: FeatureMatrix,
    lp: Vec<usize>,
    u: Vec<usize>,
    hidden: HiddenLabels,
    meta: SplitMeta,
}

impl Clone for PUDataset {
    fn clone(&self) -> Self {
        Self {
            features: self.features.clone(),
            lp: self.lp.clone(),
            u: self.u.clone(),
            hidden: HiddenLabels {
                labels: self.hidden.labels.clone(),
                accesses: AtomicUsize::new(self.hidden.accesses.load(Ordering::SeqCst)),
            },
            meta: self.meta.clone(),
        }
    }
}

impl PUDataset {
    /// Build from an explicit partition. `labels`, when given, must mark every
    /// labeled-positive row as positive.
    pub fn from_partition(
        features: FeatureMatrix,
        mut lp: Vec<usize>,
        mut u: Vec<usize>,
        labels: Option<Vec<Label>>,
        seed: u64,
    ) -> Result<Self> {
        let n = features.len();
        lp.sort_unstable();
        u.sort_unstable();
        let mut seen = HashSet::with_capacity(n);
        for &i in lp.iter().chain(&u) {
            if i >= n {
                return Err(Error::Validation(format!("index {i} out of range ({n} rows)")));
            }
            if !seen.insert(i) {
                return Err(Error::Validation(format!(
                    "index {i} appears more than once in the partition"
                )));
            }
        }
        if seen.len() != n {
            return Err(Error::Validation(format!(
                "partition covers {} of {n} rows",
                seen.len()
            )));
        }
        if lp.is_empty() || u.is_empty() {
            return Err(Error::Validation(
                "need at least one labeled positive and one unlabeled row".into(),
            ));
        }
        let (n_up, n_un, true_prior, unlabeled_prior) = match &labels {
            Some(labels) => {
                if labels.len() != n {
                    return Err(Error::Shape(format!(
                        "{} labels for {n} rows",
                        labels.len()
                    )));
                }
                if let Some(&i) = lp.iter().find(|&&i| !labels[i].is_positive()) {
                    return Err(Error::Validation(format!(
                        "labeled-positive row {i} has a negative ground-truth label"
                    )));
                }
                let n_up = u.iter().filter(|&&i| labels[i].is_positive()).count();
                let n_un = u.len() - n_up;
                (
                    Some(n_up),
                    Some(n_un),
                    Some((lp.len() + n_up) as f64 / n as f64),
                    Some(n_up as f64 / u.len() as f64),
                )
            }
            None => (None, None, None, None),
        };
        let meta = SplitMeta {
            n_total: n,
            n_lp: lp.len(),
            n_u: u.len(),
            n_up,
            n_un,
            true_prior,
            unlabeled_prior,
            seed,
        };
        Ok(Self {
            features,
            lp,
            u,
            hidden: HiddenLabels {
                labels,
                accesses: AtomicUsize::new(0),
            },
            meta,
        })
    }

    pub fn lp_indices(&self) -> &[usize] {
        &self.lp
    }

    pub fn u_indices(&self) -> &[usize] {
        &self.u
    }

    pub fn meta(&self) -> &SplitMeta {
        &self.meta
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn has_ground_truth(&self) -> bool {
        self.hidden.labels.is_some()
    }

    /// Feature rows for training. The view carries no labels.
    pub fn train_view(&self) -> TrainView<'_> {
        TrainView {
            features: &self.features,
            lp: &self.lp,
            u: &self.u,
        }
    }

    /// Ground-truth labels of the unlabeled rows, in [`Self::u_indices`] order.
    ///
    /// This is the evaluation interface; every call is counted.
    pub fn reveal_unlabeled_truth(&self) -> Result<Vec<Label>> {
        self.hidden.accesses.fetch_add(1, Ordering::SeqCst);
        let labels = self
            .hidden
            .labels
            .as_ref()
            .ok_or_else(|| Error::Validation("dataset has no ground-truth labels".into()))?;
        Ok(self.u.iter().map(|&i| labels[i]).collect())
    }

    /// How many times ground truth has been revealed.
    pub fn hidden_label_accesses(&self) -> usize {
        self.hidden.accesses.load(Ordering::SeqCst)
    }

    pub fn manifest(&self) -> SplitManifest {
        let ids = self.features.doc_ids();
        SplitManifest {
            lp: self.lp.iter().map(|&i| ids[i].clone()).collect(),
            u: self.u.iter().map(|&i| ids[i].clone()).collect(),
            meta: ManifestMeta {
                n_u: self.meta.n_u,
                n_up: self.meta.n_up,
                n_un: self.meta.n_un,
                seed: self.meta.seed,
            },
        }
    }

    /// Rebuild a dataset from a manifest over the same corpus.
    pub fn from_manifest(
        features: FeatureMatrix,
        labels: Option<Vec<Label>>,
        manifest: &SplitManifest,
    ) -> Result<Self> {
        let index: std::collections::HashMap<&str, usize> = features
            .doc_ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let lookup = |ids: &[String]| -> Result<Vec<usize>> {
            ids.iter()
                .map(|id| {
                    index.get(id.as_str()).copied().ok_or_else(|| {
                        Error::Validation(format!("manifest id {id:?} is not in the corpus"))
                    })
                })
                .collect()
        };
        let lp = lookup(&manifest.lp)?;
        let u = lookup(&manifest.u)?;
        Self::from_partition(features, lp, u, labels, manifest.meta.seed)
    }
}

/// Training-side view of a [`PUDataset`]: feature rows and ids only.
///
/// There is no way to reach labels from here:
///
/// ```compile_fail
/// fn peek(view: &pude_core::TrainView<'_>) {
///     let _ = view.reveal_unlabeled_truth();
/// }
/// ```
#[derive(Debug, Clone, Copy)]
pub struct TrainView<'a> {
    features: &'a FeatureMatrix,
    lp: &'a [usize],
    u: &'a [usize],
}

impl<'a> TrainView<'a> {
    pub fn lp_rows(&self) -> Array2<f64> {
        self.features.select(self.lp)
    }

    pub fn u_rows(&self) -> Array2<f64> {
        self.features.select(self.u)
    }

    /// Labeled positives followed by unlabeled rows.
    pub fn all_rows(&self) -> Array2<f64> {
        let idx: Vec<usize> = self.lp.iter().chain(self.u).copied().collect();
        self.features.select(&idx)
    }

    pub fn lp_ids(&self) -> Vec<&'a str> {
        self.lp.iter().map(|&i| self.features.doc_ids()[i].as_str()).collect()
    }

    pub fn u_ids(&self) -> Vec<&'a str> {
        self.u.iter().map(|&i| self.features.doc_ids()[i].as_str()).collect()
    }

    pub fn n_lp(&self) -> usize {
        self.lp.len()
    }

    pub fn n_u(&self) -> usize {
        self.u.len()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMeta {
    pub n_u: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_up: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_un: Option<usize>,
    pub seed: u64,
}

/// Serialized split: document ids per side plus summary counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub lp: Vec<String>,
    pub u: Vec<String>,
    pub meta: ManifestMeta,
}

/// Pick labeled positives from `labels` per `config`; every other row is unlabeled.
pub fn make_pu_split(features: FeatureMatrix, labels: &[Label], config: &LabelingConfig) -> Result<PUDataset> {
    if labels.len() != features.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.len()
        )));
    }
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_positive()).collect();
    let lp = select_positives(&features, &positives, config)?;
    let chosen: HashSet<usize> = lp.iter().copied().collect();
    let u = (0..labels.len()).filter(|i| !chosen.contains(i)).collect();
    PUDataset::from_partition(features, lp, u, Some(labels.to_vec()), config.seed)
}

/// Choose labeled positives among `candidates` (rows of `features`).
pub fn select_positives(features: &FeatureMatrix, candidates: &[usize], config: &LabelingConfig) -> Result<Vec<usize>> {
    config.validate()?;
    let k = match (&config.mechanism, config.target_lp_count) {
        (_, Some(k)) => k,
        (LabelingMechanism::Scar { label_frequency }, None) => {
            ((label_frequency * candidates.len() as f64).round() as usize).max(1)
        }
        (LabelingMechanism::Biased { .. }, None) => unreachable!("validated"),
    };
    if k > candidates.len() {
        return Err(Error::Validation(format!(
            "asked for {k} labeled positives but only {} positives exist",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut picked = match &config.mechanism {
        LabelingMechanism::Scar { .. } => {
            let mut pool = candidates.to_vec();
            let (chosen, _) = pool.partial_shuffle(&mut rng, k);
            chosen.to_vec()
        }
        LabelingMechanism::Biased {
            weights,
            temperature,
        } => {
            if weights.len() != features.dim() {
                return Err(Error::Shape(format!(
                    "bias weights have length {} but features have dimension {}",
                    weights.len(),
                    features.dim()
                )));
            }
            // Gumbel-top-k: equivalent to k successive draws without
            // replacement with probability proportional to exp(logit).
            let w = ndarray::ArrayView1::from(weights.as_slice());
            let mut keyed: Vec<(f64, usize)> = candidates
                .iter()
                .map(|&i| {
                    let logit = features.row(i).dot(&w) / temperature;
                    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                    (logit - (-u.ln()).ln(), i)
                })
                .collect();
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            keyed.into_iter().take(k).map(|(_, i)| i).collect()
        }
    };
    picked.sort_unstable();
    Ok(picked)
}
