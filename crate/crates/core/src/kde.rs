//! Gaussian kernel density estimation and the density-ratio classifier built
//! on it: `score(x) = log D_p(x) - log D(x)`, with `D_p` fit on the labeled
//! positives and `D` on all training rows.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, TrainView};
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::vae::{train_vae, VaeConfig, VaeModel};

pub const CHECKPOINT_TAG: &str = "pude-kde";
pub const DEFAULT_BANDWIDTH: f64 = 1.9;

/// Isotropic Gaussian KDE: `(1/m) sum_i N(x; x_i, h^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    /// Support points minus `center`.
    support: Array2<f64>,
    center: Array1<f64>,
    sq_norms: Array1<f64>,
    bandwidth: f64,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl KdeModel {
    /// Store `points` as the support; no optimization happens here.
    pub fn fit(points: &Array2<f64>, bandwidth: f64) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::Validation("KDE needs at least one support point".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!("bandwidth must be > 0, got {bandwidth}")));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("KDE support points".into()));
        }
        // Centering keeps the expanded squared distances well conditioned.
        let center = points.mean_axis(Axis(0)).expect("non-empty");
        let support = points - &center.view().insert_axis(Axis(0));
        let sq_norms = support.map_axis(Axis(1), |r| r.dot(&r));
        Ok(Self {
            support,
            center,
            sq_norms,
            bandwidth,
        })
    }

    pub fn support_size(&self) -> usize {
        self.support.nrows()
    }

    pub fn dim(&self) -> usize {
        self.support.ncols()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Support points in their original coordinates.
    pub fn support_points(&self) -> Array2<f64> {
        &self.support + &self.center.view().insert_axis(Axis(0))
    }

    /// `log (2 pi h^2)^(-d/2)`, shared by every kernel.
    pub fn log_normalizer(&self) -> f64 {
        -0.5 * self.dim() as f64 * (2.0 * PI * self.bandwidth * self.bandwidth).ln()
    }

    fn check(&self, cols: usize) -> Result<()> {
        if cols != self.dim() {
            return Err(Error::Shape(format!(
                "KDE over {} dimensions queried with {cols}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// `log((1/m) sum_i exp(-|x - x_i|^2 / 2h^2))` for every row: the log
    /// density without the kernel normalization constant.
    pub fn log_kernel_mean(&self, queries: &Array2<f64>) -> Result<Array1<f64>> {
        self.check(queries.ncols())?;
        let q = queries - &self.center.view().insert_axis(Axis(0));
        let cross = q.dot(&self.support.t());
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let log_m = (self.support_size() as f64).ln();
        let out = q
            .outer_iter()
            .zip(cross.outer_iter())
            .map(|(row, cross)| {
                let qn = row.dot(&row);
                let terms = cross
                    .iter()
                    .zip(self.sq_norms.iter())
                    .map(move |(c, s)| -((qn + s - 2.0 * c).max(0.0)) * inv);
                log_sum_exp(terms) - log_m
            })
            .collect();
        Ok(out)
    }

    /// Log density of every query row.
    pub fn log_density(&self, queries: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.log_kernel_mean(queries)? + self.log_normalizer())
    }

    /// Log density of a single point.
    pub fn log_density_at(&self, x: ArrayView1<f64>) -> Result<f64> {
        let q = x.to_owned().insert_axis(Axis(0));
        Ok(self.log_density(&q)?[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KdeConfig {
    pub bandwidth: f64,
    /// Decision threshold on the log ratio; a row is positive iff `score >= threshold`.
    pub threshold: f64,
    /// Settings for the reducer; `input_dim` is taken from the data. Features
    /// with at most `latent_dim` columns are used as they are.
    pub vae: VaeConfig,
}

impl Default for KdeConfig {
    fn default() -> Self {
        Self {
            bandwidth: DEFAULT_BANDWIDTH,
            threshold: 0.0,
            vae: VaeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeClassifier {
    pub d_p: KdeModel,
    pub d_all: KdeModel,
    pub threshold: f64,
    /// Reducer applied before both densities, absent for low-dimensional input.
    pub vae: Option<VaeModel>,
}

impl KdeClassifier {
    /// Fit on already reduced points. `d_all` gets the positives followed by
    /// the unlabeled points.
    pub fn from_latent(
        positives: &Array2<f64>,
        unlabeled: &Array2<f64>,
        bandwidth: f64,
        threshold: f64,
    ) -> Result<Self> {
        let all = ndarray::concatenate(Axis(0), &[positives.view(), unlabeled.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Self {
            d_p: KdeModel::fit(positives, bandwidth)?,
            d_all: KdeModel::fit(&all, bandwidth)?,
            threshold,
            vae: None,
        })
    }

    /// Train the reducer (when needed) on every training row, then fit both densities.
    pub fn fit(view: &TrainView<'_>, config: &KdeConfig, seed: u64) -> Result<Self> {
        let lp = view.lp_rows();
        let u = view.u_rows();
        let dim = view.dim();
        if dim <= config.vae.latent_dim {
            return Self::from_latent(&lp, &u, config.bandwidth, config.threshold);
        }
        let vae_cfg = VaeConfig {
            input_dim: dim,
            ..config.vae.clone()
        };
        let vae = train_vae(&view.all_rows(), vae_cfg, seed).map_err(|e| e.context("training the VAE reducer"))?;
        let mut clf = Self::from_latent(&vae.encode(&lp)?, &vae.encode(&u)?, config.bandwidth, config.threshold)?;
        clf.vae = Some(vae);
        Ok(clf)
    }

    fn reduce(&self, rows: &Array2<f64>) -> Result<Array2<f64>> {
        match &self.vae {
            Some(v) => v.encode(rows),
            None => Ok(rows.clone()),
        }
    }

    /// `log D_p(x) - log D(x)` per row. The shared normalization constant
    /// cancels and is never added.
    pub fn score(&self, rows: &Array2<f64>) -> Result<Array1<f64>> {
        let z = self.reduce(rows)?;
        let s = self.d_p.log_kernel_mean(&z)? - self.d_all.log_kernel_mean(&z)?;
        if s.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("KDE score".into()));
        }
        Ok(s)
    }

    pub fn predict(&self, rows: &Array2<f64>) -> Result<Vec<Label>> {
        Ok(self
            .score(rows)?
            .iter()
            .map(|&s| Label::from_bool(s >= self.threshold))
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Checkpoint::new(CHECKPOINT_TAG, self)?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::load(path)?.decode(CHECKPOINT_TAG)
    }
}
