use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, PUDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_labels(predicted: &[Label], truth: &[Label]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} labels",
                predicted.len(),
                truth.len()
            )));
        }
        let mut c = Confusion::default();
        for (p, t) in predicted.iter().zip(truth) {
            match (p.is_positive(), t.is_positive()) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `tp / (tp + fp)`, 0 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `tp / (tp + fn)`, 0 when there are no positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall, 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// F1 in percent of predicting every unlabeled document positive.
pub fn all_positive_f1(n_up: usize, n_u: usize) -> f64 {
    100.0 * 2.0 * n_up as f64 / (n_u + n_up) as f64
}

/// Average precision of a ranking by descending score; equal scores keep
/// their input order.
pub fn average_precision(scores: &[f64], truth: &[Label]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), truth.len())));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let positives = truth.iter().filter(|l| l.is_positive()).count();
    if positives == 0 {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if truth[i].is_positive() {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Metrics of one method on the unlabeled set. Rates are in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub dataset: String,
    pub labeling: String,
    pub seed: u64,
    pub lp_count: usize,
    pub n_u: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_precision: Option<f64>,
    /// Ground-truth reads that happened before evaluation started.
    pub hidden_label_accesses_during_training: usize,
    /// Method-specific numbers such as the cutoff of a ranking.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
    /// Not serialized, so that reports of a replayed seed stay byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl EvalReport {
    pub fn from_confusion(confusion: Confusion) -> Self {
        Self {
            method: String::new(),
            dataset: String::new(),
            labeling: String::new(),
            seed: 0,
            lp_count: 0,
            n_u: confusion.total(),
            precision: 100.0 * confusion.precision(),
            recall: 100.0 * confusion.recall(),
            f1: 100.0 * confusion.f1(),
            confusion,
            average_precision: None,
            hidden_label_accesses_during_training: 0,
            details: BTreeMap::new(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Score predictions for the unlabeled rows (in [`PUDataset::u_indices`]
/// order) against the hidden labels. This reads ground truth once.
pub fn evaluate_transductive(predictions: &[Label], scores: Option<&[f64]>, dataset: &PUDataset) -> Result<EvalReport> {
    let n_u = dataset.u_indices().len();
    if predictions.len() != n_u {
        return Err(Error::Validation(format!(
            "{} predictions for {n_u} unlabeled documents",
            predictions.len()
        )));
    }
    let truth = dataset.reveal_unlabeled_truth()?;
    let mut report = EvalReport::from_confusion(Confusion::from_labels(predictions, &truth)?);
    if let Some(s) = scores {
        report.average_precision = Some(100.0 * average_precision(s, &truth)?);
    }
    report.lp_count = dataset.lp_indices().len();
    Ok(report)
}

/// Type-7 quantile (linear interpolation between order statistics).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Median and interquartile range of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub iqr: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        Self {
            median: quantile(values, 0.5),
            iqr: quantile(values, 0.75) - quantile(values, 0.25),
            n: values.len(),
        }
    }
}

/// Largest F1 over all top-`k` cutoffs of a ranking, with the best `k`.
pub fn best_cutoff(ranked_truth: &[Label]) -> (usize, f64) {
    let positives = ranked_truth.iter().filter(|l| l.is_positive()).count();
    let mut best = (0, 0.0);
    let mut tp = 0usize;
    for (i, l) in ranked_truth.iter().enumerate() {
        if l.is_positive() {
            tp += 1;
        }
        let k = i + 1;
        let f1 = if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (k + positives) as f64
        };
        if f1 > best.1 {
            best = (k, f1);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topic1_all_positive() {
        let f1 = all_positive_f1(1844, 10012);
        assert!((f1 - 31.11).abs() < 0.005);
        let mut truth = vec![Label::Positive; 1844];
        truth.extend(vec![Label::Negative; 10012 - 1844]);
        let c = Confusion::from_labels(&vec![Label::Positive; 10012], &truth).unwrap();
        assert!((100.0 * c.precision() - 18.42).abs() < 0.005);
        assert_eq!(100.0 * c.recall(), 100.0);
        assert!((100.0 * c.f1() - f1).abs() < 1e-12);
    }

    #[test]
    fn no_positive_predictions() {
        let c = Confusion::from_labels(&[Label::Negative; 3], &[Label::Positive, Label::Negative, Label::Positive])
            .unwrap();
        assert_eq!((c.precision(), c.f1()), (0.0, 0.0));
    }

    #[test]
    fn average_precision_of_perfect_and_reversed() {
        let truth = [Label::Positive, Label::Negative, Label::Positive];
        assert_eq!(average_precision(&[3.0, 1.0, 2.0], &truth).unwrap(), 1.0);
        let ap = average_precision(&[1.0, 3.0, 2.0], &truth).unwrap();
        assert!((ap - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn quartiles() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!((s.median, s.iqr, s.n), (2.5, 1.5, 4));
        assert_eq!(Summary::of(&[7.0]).iqr, 0.0);
    }

    #[test]
    fn best_cutoff_of_perfect_ranking() {
        let ranked = [Label::Positive, Label::Positive, Label::Negative];
        assert_eq!(best_cutoff(&ranked), (2, 1.0));
    }
}
