//! Energy-based density-ratio classifier. Two networks `g_p` and `g_q` model
//! `p(x) ∝ exp(-g_p(x))` (labeled positives) and `q(x) ∝ exp(-g_q(x))` (all
//! data); a row is scored `g_q(x) - g_p(x)` and called positive at `>= 0`.

mod langevin;
mod train;

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

pub use langevin::{langevin_sample, langevin_sample_with, ChainInit, ChainPool, DataBox, Energy, LangevinConfig};
pub use train::{batch_loss, cd_loss_grad, train_pude_em, BatchRows, BatchLoss};

use crate::corpus::{Label, TrainView};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Mlp, MlpConfig, TrainConfig};

pub const CHECKPOINT_TAG: &str = "pude-em";

/// Weights of the training objective
/// `alpha * NLL_p + beta * NLL_q + gamma * R_pu + lambda * (mean g_p^2 + mean g_q^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EbmLossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for EbmLossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            lambda: 0.1,
        }
    }
}

impl EbmLossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Differentiable stand-in for the zero-one PU risk of `f = g_q - g_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PuSurrogate {
    /// `mean_LP sigmoid(-f) + mean_U sigmoid(f)`: labeled positives against
    /// the whole unlabeled set as soft negatives. Needs no class prior.
    Sigmoid,
    /// Non-negative risk `pi mean_LP sigmoid(-f) + max(0, mean_U sigmoid(f) - pi mean_LP sigmoid(f))`.
    NonNegative { prior: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    /// Energy network shape; `input_dim` is taken from the data.
    pub network: MlpConfig,
    pub train: TrainConfig,
    /// Sampler settings; during training chains draw their noise from the
    /// training seed and `langevin.seed` is ignored.
    pub langevin: LangevinConfig,
    pub weights: EbmLossWeights,
    pub pu_loss: PuSurrogate,
    /// Langevin chains per network per batch; defaults to the batch size.
    pub n_negatives: Option<usize>,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            network: MlpConfig::default(),
            train: TrainConfig::default(),
            langevin: LangevinConfig::default(),
            weights: EbmLossWeights::default(),
            pu_loss: PuSurrogate::Sigmoid,
            n_negatives: None,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.langevin.validate()?;
        self.weights.validate()?;
        if self.network.output_dim != 1 {
            return Err(Error::Config("energy networks must have one output".into()));
        }
        if self.n_negatives == Some(0) {
            return Err(Error::Config("n_negatives must be >= 1".into()));
        }
        if let PuSurrogate::NonNegative { prior } = self.pu_loss {
            if !(prior > 0.0 && prior < 1.0) {
                return Err(Error::Config(format!("class prior must lie in (0, 1), got {prior}")));
            }
        }
        Ok(())
    }

    pub fn n_negatives(&self) -> usize {
        self.n_negatives.unwrap_or(self.train.batch_size)
    }
}

/// Per-epoch means of every loss term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub total: f64,
    pub cd_p: f64,
    pub cd_q: f64,
    pub pu: f64,
    pub reg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyPair {
    pub g_p: Mlp,
    pub g_q: Mlp,
    pub config: EmConfig,
    pub trace: Vec<EpochTrace>,
    trained: bool,
}

impl EnergyPair {
    /// Wrap two networks that are ready for scoring.
    pub fn from_networks(g_p: Mlp, g_q: Mlp) -> Result<Self> {
        if g_p.input_dim() != g_q.input_dim() {
            return Err(Error::Shape(format!(
                "energy networks disagree on input width: {} vs {}",
                g_p.input_dim(),
                g_q.input_dim()
            )));
        }
        if g_p.config().output_dim != 1 || g_q.config().output_dim != 1 {
            return Err(Error::Shape("energy networks must have one output".into()));
        }
        Ok(Self {
            config: EmConfig {
                network: g_p.config().clone(),
                ..EmConfig::default()
            },
            g_p,
            g_q,
            trace: Vec::new(),
            trained: true,
        })
    }

    pub(crate) fn untrained(g_p: Mlp, g_q: Mlp, config: EmConfig) -> Self {
        Self {
            g_p,
            g_q,
            config,
            trace: Vec::new(),
            trained: false,
        }
    }

    pub(crate) fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn fit(view: &TrainView<'_>, config: &EmConfig, seed: u64) -> Result<Self> {
        train_pude_em(&view.lp_rows(), &view.u_rows(), config, seed)
    }

    /// `g_q(x) - g_p(x)` per row, eval mode.
    pub fn score(&self, rows: &Array2<f64>) -> Result<Array1<f64>> {
        if !self.trained {
            return Err(Error::State("energy pair has not been trained".into()));
        }
        let q = self.g_q.predict(rows)?;
        let p = self.g_p.predict(rows)?;
        Ok((q - p).index_axis_move(Axis(1), 0))
    }

    pub fn predict(&self, rows: &Array2<f64>) -> Result<Vec<Label>> {
        Ok(self.score(rows)?.iter().map(|&s| Label::from_bool(s >= 0.0)).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Checkpoint::new(CHECKPOINT_TAG, self)?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::load(path)?.decode(CHECKPOINT_TAG)
    }
}
