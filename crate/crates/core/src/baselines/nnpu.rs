use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, TrainView};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Adamax, Checkpoint, Mlp, MlpConfig, Mode, Tape, TrainConfig, Var};

pub const CHECKPOINT_TAG: &str = "nnpu";

/// `l(z) = 1 / (1 + e^z)`
pub fn sigmoid_loss(z: f64) -> f64 {
    sigmoid(-z)
}

/// Parts of the non-negative risk `pi R_p+ + max(0, R_u- - pi R_p-)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnpuRisk {
    pub risk: f64,
    /// `pi R_p+`
    pub positive: f64,
    /// `R_u- - pi R_p-` before clamping.
    pub negative_unclamped: f64,
    /// `max(0, R_u- - pi R_p-)`
    pub negative_clamped: f64,
}

/// Non-negative PU risk of real-valued scores with the sigmoid loss.
pub fn nnpu_risk(scores_lp: &[f64], scores_u: &[f64], prior: f64) -> Result<NnpuRisk> {
    if scores_lp.is_empty() || scores_u.is_empty() {
        return Err(Error::Validation("nnPU risk needs labeled-positive and unlabeled scores".into()));
    }
    if !(0.0..=1.0).contains(&prior) {
        return Err(Error::Config(format!("class prior must lie in [0, 1], got {prior}")));
    }
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&s| f(s)).sum::<f64>() / v.len() as f64;
    let r_p_pos = mean(scores_lp, &|s| sigmoid_loss(s));
    let r_p_neg = mean(scores_lp, &|s| sigmoid_loss(-s));
    let r_u_neg = mean(scores_u, &|s| sigmoid_loss(-s));
    let positive = prior * r_p_pos;
    let negative_unclamped = r_u_neg - prior * r_p_neg;
    let negative_clamped = negative_unclamped.max(0.0);
    Ok(NnpuRisk {
        risk: positive + negative_clamped,
        positive,
        negative_unclamped,
        negative_clamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnpuConfig {
    pub class_prior: f64,
    #[serde(default)]
    pub network: MlpConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_true")]
    pub proportional_batching: bool,
    /// Optimize `(R_p+ + max(0, (R_u- - pi R_p-) / (1 - pi))) / 2` instead.
    #[serde(default)]
    pub balanced_risk: bool,
}

fn default_true() -> bool {
    true
}

impl NnpuConfig {
    pub fn new(class_prior: f64) -> Self {
        Self {
            class_prior,
            network: MlpConfig::default(),
            train: TrainConfig::default(),
            proportional_batching: true,
            balanced_risk: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.class_prior > 0.0 && self.class_prior < 1.0) {
            return Err(Error::Config(format!(
                "class prior must lie in (0, 1), got {}",
                self.class_prior
            )));
        }
        if self.network.output_dim != 1 {
            return Err(Error::Config("nnPU scorer must have one output".into()));
        }
        self.train.validate()
    }
}

/// Labeled-positive and unlabeled rows per minibatch when batches keep the
/// global ratio: `ceil(batch * n_lp / (n_lp + n_u))` positives, at least one.
pub fn proportional_counts(n_lp: usize, n_u: usize, batch: usize) -> (usize, usize) {
    let n = n_lp + n_u;
    let lp = (batch * n_lp).div_ceil(n).clamp(1, batch.max(2) - 1);
    (lp, batch.saturating_sub(lp).max(1))
}

/// One optimizer step of the training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnpuStep {
    pub epoch: usize,
    pub step: usize,
    pub risk: NnpuRisk,
    /// Set when the negative part was below zero and was ascended instead.
    pub switched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnpuModel {
    pub net: Mlp,
    pub config: NnpuConfig,
    pub trace: Vec<NnpuStep>,
}

impl NnpuModel {
    pub fn fit(view: &TrainView<'_>, config: &NnpuConfig, seed: u64) -> Result<Self> {
        train_nnpu_trans(&view.lp_rows(), &view.u_rows(), config, seed)
    }

    pub fn score(&self, rows: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.net.predict(rows)?.index_axis_move(Axis(1), 0))
    }

    pub fn predict(&self, rows: &Array2<f64>) -> Result<Vec<Label>> {
        Ok(self.score(rows)?.iter().map(|&s| Label::from_bool(s >= 0.0)).collect())
    }

    /// Mean risk per epoch.
    pub fn epoch_risks(&self) -> Vec<f64> {
        let epochs = self.trace.last().map_or(0, |s| s.epoch + 1);
        let mut sums = vec![(0.0, 0usize); epochs];
        for s in &self.trace {
            sums[s.epoch].0 += s.risk.risk;
            sums[s.epoch].1 += 1;
        }
        sums.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Checkpoint::new(CHECKPOINT_TAG, self)?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::load(path)?.decode(CHECKPOINT_TAG)
    }
}

/// Row indices of every minibatch as `(lp, u)` pairs.
fn plan_batches(n_lp: usize, n_u: usize, config: &NnpuConfig, rng: &mut ChaCha8Rng) -> Vec<(Vec<usize>, Vec<usize>)> {
    let batch = config.train.batch_size;
    let mut lp: Vec<usize> = (0..n_lp).collect();
    let mut u: Vec<usize> = (0..n_u).collect();
    lp.shuffle(rng);
    u.shuffle(rng);
    if config.proportional_batching {
        let (per_lp, per_u) = proportional_counts(n_lp, n_u, batch);
        let mut cursor = 0;
        u.chunks(per_u)
            .map(|uc| {
                let lc = (0..per_lp).map(|k| lp[(cursor + k) % n_lp]).collect();
                cursor = (cursor + per_lp) % n_lp;
                (lc, uc.to_vec())
            })
            .collect()
    } else {
        // mixed pool: indices < n_lp are positives
        let mut all: Vec<usize> = (0..n_lp + n_u).collect();
        all.shuffle(rng);
        all.chunks(batch)
            .map(|c| {
                let lc = c.iter().copied().filter(|&i| i < n_lp).collect();
                let uc = c.iter().filter(|&&i| i >= n_lp).map(|&i| i - n_lp).collect();
                (lc, uc)
            })
            .collect()
    }
}

/// Train an nnPU scorer on labeled-positive rows `lp` and unlabeled rows `u`.
/// When the unclamped negative part of a minibatch risk is below zero, the
/// step ascends that part instead of descending the clamped risk.
pub fn train_nnpu_trans(lp: &Array2<f64>, u: &Array2<f64>, config: &NnpuConfig, seed: u64) -> Result<NnpuModel> {
    config.validate()?;
    if lp.nrows() == 0 || u.nrows() == 0 {
        return Err(Error::Validation("nnPU needs labeled-positive and unlabeled rows".into()));
    }
    if lp.ncols() != u.ncols() {
        return Err(Error::Shape("labeled and unlabeled rows differ in width".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::new(
        MlpConfig {
            input_dim: lp.ncols(),
            ..config.network.clone()
        },
        &mut rng,
    )?;
    let mut opt = Adamax::new(config.train.optimizer.clone());
    let pi = config.class_prior;
    let mut trace = Vec::new();
    for epoch in 0..config.train.epochs {
        for (step, (li, ui)) in plan_batches(lp.nrows(), u.nrows(), config, &mut rng).into_iter().enumerate() {
            if li.len() + ui.len() < 2 {
                continue;
            }
            let (nl, nu) = (li.len(), ui.len());
            let rows = ndarray::concatenate(Axis(0), &[lp.select(Axis(0), &li).view(), u.select(Axis(0), &ui).view()])
                .map_err(|e| Error::Shape(e.to_string()))?;
            let mut tape = Tape::new();
            let x = tape.constant(rows);
            let bound = net.forward(&mut tape, x, Mode::Train).map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence(format!("nnPU scores at epoch {epoch}, step {step}")),
                other => other,
            })?;
            let s = bound.output;
            let mean_sig = |tape: &mut Tape, v: Var, negate: bool| {
                let a = if negate { tape.neg(v) } else { v };
                let l = tape.sigmoid(a);
                tape.mean(l)
            };
            // l(z) = sigmoid(-z): R_p+ uses -s, R_p- and R_u- use +s
            let zero = tape.scalar(0.0);
            let (r_p_pos, r_p_neg) = if nl > 0 {
                let sl = tape.slice_rows(s, 0, nl)?;
                (mean_sig(&mut tape, sl, true), mean_sig(&mut tape, sl, false))
            } else {
                (zero, zero)
            };
            let r_u_neg = if nu > 0 {
                let su = tape.slice_rows(s, nl, nl + nu)?;
                mean_sig(&mut tape, su, false)
            } else {
                zero
            };
            let scaled = tape.scale(r_p_neg, pi);
            let neg_part = tape.sub(r_u_neg, scaled)?;
            let pos_part = tape.scale(r_p_pos, pi);
            let (pos_w, neg_w) = if config.balanced_risk {
                (0.5 / pi, 0.5 / (1.0 - pi))
            } else {
                (1.0, 1.0)
            };
            let unclamped = tape.item(neg_part);
            let risk = NnpuRisk {
                risk: pos_w * tape.item(pos_part) + neg_w * unclamped.max(0.0),
                positive: tape.item(pos_part),
                negative_unclamped: unclamped,
                negative_clamped: unclamped.max(0.0),
            };
            if !risk.risk.is_finite() {
                return Err(Error::Divergence(format!("nnPU risk at epoch {epoch}, step {step}")));
            }
            let switched = unclamped < 0.0;
            let objective = if switched {
                tape.scale(neg_part, -neg_w)
            } else {
                let p = tape.scale(pos_part, pos_w);
                let n = tape.scale(neg_part, neg_w);
                tape.add(p, n)?
            };
            let mut grads = tape.backward(objective)?;
            let grads: Vec<_> = bound.params.iter().map(|&p| grads.take(p)).collect();
            opt.step(net.params_mut(), &grads)?;
            trace.push(NnpuStep {
                epoch,
                step,
                risk,
                switched,
            });
        }
    }
    Ok(NnpuModel {
        net,
        config: config.clone(),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_scores() {
        let r = nnpu_risk(&[0.0, 0.0], &[0.0, 0.0, 0.0], 0.3).unwrap();
        assert!((r.risk - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_prior_is_unlabeled_term() {
        let u = [0.4, -1.0, 2.0];
        let r = nnpu_risk(&[1.0], &u, 0.0).unwrap();
        let expected = u.iter().map(|&s| 1.0 / (1.0 + (-s as f64).exp())).sum::<f64>() / 3.0;
        assert!((r.risk - expected).abs() < 1e-15);
    }

    #[test]
    fn empty_inputs_and_bad_prior_rejected() {
        assert!(nnpu_risk(&[], &[1.0], 0.3).is_err());
        assert!(nnpu_risk(&[1.0], &[], 0.3).is_err());
        assert!(NnpuConfig::new(0.0).validate().is_err());
        assert!(NnpuConfig::new(1.0).validate().is_err());
    }

    #[test]
    fn proportional_counts_keep_one_positive() {
        assert_eq!(proportional_counts(20, 10012, 128), (1, 127));
        assert_eq!(proportional_counts(50, 50, 128), (64, 64));
        let (lp, u) = proportional_counts(1, 1, 128);
        assert!(lp >= 1 && u >= 1);
    }
}
