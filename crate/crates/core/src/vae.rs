//! Variational autoencoder used to reduce document features before kernel
//! density estimation.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adamax, AdamaxConfig, Checkpoint, Mlp, MlpConfig, Mode, Tape, Var};

pub const CHECKPOINT_TAG: &str = "vae";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub kl_weight: f64,
    pub optimizer: AdamaxConfig,
    /// z-score every input column with statistics of the training rows.
    pub standardize: bool,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            input_dim: 0,
            hidden_dim: 256,
            latent_dim: 50,
            epochs: 30,
            batch_size: 128,
            kl_weight: 1.0,
            optimizer: AdamaxConfig::default(),
            standardize: true,
        }
    }
}

impl VaeConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.latent_dim == 0 {
            return Err(Error::Config("VAE dimensions must be >= 1".into()));
        }
        if self.latent_dim >= self.input_dim {
            return Err(Error::Config(format!(
                "latent_dim {} must be below input_dim {}",
                self.latent_dim, self.input_dim
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("VAE epochs and batch_size must be >= 1".into()));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::Config("kl_weight must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Batch means of the objective's parts; `elbo = reconstruction - kl_weight * kl`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub elbo: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub elbo: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeModel {
    config: VaeConfig,
    /// `x -> [mu | log sigma^2]`
    encoder: Mlp,
    /// `z -> x_hat`
    decoder: Mlp,
    shift: Array1<f64>,
    scale: Array1<f64>,
    trace: Vec<EpochLoss>,
    trained: bool,
}

/// `KL(N(mu, diag(exp(logvar))) || N(0, I))` in closed form.
pub fn kl_diag_gaussian(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

struct Graph {
    loss: Var,
    reconstruction: Var,
    kl: Var,
}

impl VaeModel {
    /// Untrained model with fresh weights and identity standardization.
    pub fn new(config: VaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = |input, output| MlpConfig {
            layer_count: 2,
            hidden_width: config.hidden_dim,
            use_batchnorm: false,
            ..MlpConfig::new(input, output)
        };
        let encoder = Mlp::new(half(config.input_dim, 2 * config.latent_dim), &mut rng)?;
        let decoder = Mlp::new(half(config.latent_dim, config.input_dim), &mut rng)?;
        Ok(Self {
            shift: Array1::zeros(config.input_dim),
            scale: Array1::ones(config.input_dim),
            config,
            encoder,
            decoder,
            trace: Vec::new(),
            trained: false,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn loss_trace(&self) -> &[EpochLoss] {
        &self.trace
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn check_dim(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "VAE expects {} columns, got {}",
                self.config.input_dim,
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Apply the stored input standardization.
    pub fn standardize(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_dim(x)?;
        Ok((x - &self.shift.view().insert_axis(Axis(0))) * &self.scale.view().insert_axis(Axis(0)))
    }

    fn fit_standardization(&mut self, x: &Array2<f64>) {
        if !self.config.standardize {
            return;
        }
        self.shift = x.mean_axis(Axis(0)).expect("non-empty");
        self.scale = x
            .std_axis(Axis(0), 0.0)
            .mapv(|sd| if sd > 1e-12 { 1.0 / sd } else { 1.0 });
    }

    /// Record `-elbo` on `tape` for standardized rows `x` and fixed
    /// reparameterization noise. Parameter nodes (encoder then decoder) are
    /// appended to `params` when tracking.
    fn record(
        &mut self,
        tape: &mut Tape,
        x: &Array2<f64>,
        noise: &Array2<f64>,
        params: Option<&mut Vec<Var>>,
    ) -> Result<Graph> {
        let n = x.nrows() as f64;
        let d = x.ncols() as f64;
        let latent = self.config.latent_dim;
        if noise.dim() != (x.nrows(), latent) {
            return Err(Error::Shape(format!(
                "noise must be {}x{latent}, got {:?}",
                x.nrows(),
                noise.dim()
            )));
        }
        let xv = tape.constant(x.clone());
        let track = params.is_some();
        let mut bound = Vec::new();
        let enc = if track {
            let b = self.encoder.forward(tape, xv, Mode::Train)?;
            bound.extend(b.params);
            b.output
        } else {
            self.encoder.forward_frozen(tape, xv)?
        };
        let mu = tape.slice_cols(enc, 0, latent)?;
        let logvar = tape.slice_cols(enc, latent, 2 * latent)?;
        let half = tape.scale(logvar, 0.5);
        let std = tape.exp(half);
        let eps = tape.constant(noise.clone());
        let spread = tape.mul(std, eps)?;
        let z = tape.add(mu, spread)?;
        let x_hat = if track {
            let b = self.decoder.forward(tape, z, Mode::Train)?;
            bound.extend(b.params);
            b.output
        } else {
            self.decoder.forward_frozen(tape, z)?
        };

        let diff = tape.sub(x_hat, xv)?;
        let sq = tape.square(diff);
        let sse = tape.sum(sq);
        let rec = tape.scale(sse, -0.5 / n);
        let reconstruction = tape.add_scalar(rec, -0.5 * d * (2.0 * PI).ln());

        let mu2 = tape.square(mu);
        let var = tape.exp(logvar);
        let a = tape.add(mu2, var)?;
        let b = tape.sub(a, logvar)?;
        let total = tape.sum(b);
        let shifted = tape.add_scalar(total, -(latent as f64) * n);
        let kl = tape.scale(shifted, 0.5 / n);

        let loss = if self.config.kl_weight == 0.0 {
            tape.neg(reconstruction)
        } else {
            let weighted = tape.scale(kl, self.config.kl_weight);
            tape.sub(weighted, reconstruction)?
        };
        if let Some(p) = params {
            p.extend(bound);
        }
        Ok(Graph {
            loss,
            reconstruction,
            kl,
        })
    }

    fn terms(&self, tape: &Tape, g: &Graph) -> ElboTerms {
        let reconstruction = tape.item(g.reconstruction);
        let kl = tape.item(g.kl);
        ElboTerms {
            elbo: reconstruction - self.config.kl_weight * kl,
            reconstruction,
            kl,
        }
    }

    /// Batch-mean ELBO with the given reparameterization noise.
    pub fn elbo_with_noise(&self, batch: &Array2<f64>, noise: &Array2<f64>) -> Result<ElboTerms> {
        let x = self.standardize(batch)?;
        let mut tape = Tape::new();
        let mut frozen = self.clone();
        let g = frozen.record(&mut tape, &x, noise, None)?;
        Ok(self.terms(&tape, &g))
    }

    /// Batch-mean ELBO with noise drawn from `seed`.
    pub fn elbo(&self, batch: &Array2<f64>, seed: u64) -> Result<ElboTerms> {
        let noise = standard_normal(batch.nrows(), self.config.latent_dim, &mut ChaCha8Rng::seed_from_u64(seed));
        self.elbo_with_noise(batch, &noise)
    }

    /// Gradients of `-elbo` for every encoder then decoder parameter, in
    /// [`Mlp::params`] order.
    pub fn gradients(&self, batch: &Array2<f64>, noise: &Array2<f64>) -> Result<(ElboTerms, Vec<Array2<f64>>)> {
        let x = self.standardize(batch)?;
        let mut work = self.clone();
        let mut tape = Tape::new();
        let mut params = Vec::new();
        let g = work.record(&mut tape, &x, noise, Some(&mut params))?;
        let terms = self.terms(&tape, &g);
        let mut grads = tape.backward(g.loss)?;
        Ok((terms, params.into_iter().map(|p| grads.take(p)).collect()))
    }

    /// Mutable parameters of encoder then decoder, matching [`Self::gradients`].
    pub fn params_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out: Vec<_> = self
            .encoder
            .params_mut()
            .into_iter()
            .map(|(n, p)| (format!("encoder.{n}"), p))
            .collect();
        out.extend(
            self.decoder
                .params_mut()
                .into_iter()
                .map(|(n, p)| (format!("decoder.{n}"), p)),
        );
        out
    }

    /// Posterior means `mu(x)`, one row per input row.
    pub fn encode(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if !self.trained {
            return Err(Error::State("VAE has not been trained".into()));
        }
        let z = self.standardize(x)?;
        let out = self.encoder.evaluate(&z, Mode::Eval)?;
        Ok(out.slice(s![.., ..self.config.latent_dim]).to_owned())
    }

    /// Posterior means and log-variances.
    pub fn encode_distribution(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let z = self.standardize(x)?;
        let out = self.encoder.evaluate(&z, Mode::Eval)?;
        let l = self.config.latent_dim;
        Ok((out.slice(s![.., ..l]).to_owned(), out.slice(s![.., l..]).to_owned()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Checkpoint::new(CHECKPOINT_TAG, self)?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::load(path)?.decode(CHECKPOINT_TAG)
    }
}

fn standard_normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Fit a VAE on every row of `features` by minibatch ELBO ascent.
pub fn train_vae(features: &Array2<f64>, config: VaeConfig, seed: u64) -> Result<VaeModel> {
    if features.nrows() == 0 {
        return Err(Error::Validation("cannot train a VAE on zero rows".into()));
    }
    let mut model = VaeModel::new(config, seed)?;
    model.check_dim(features)?;
    model.fit_standardization(features);
    let x = model.standardize(features)?;
    let cfg = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f7ae);
    let mut opt = Adamax::new(cfg.optimizer.clone());
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut elbo, mut rec, mut kl, mut seen) = (0.0, 0.0, 0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = x.select(Axis(0), idx);
            let noise = standard_normal(idx.len(), cfg.latent_dim, &mut rng);
            let mut tape = Tape::new();
            let mut params = Vec::new();
            let where_ = || format!("VAE loss at epoch {epoch}, batch {b}");
            let g = model
                .record(&mut tape, &batch, &noise, Some(&mut params))
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Divergence(where_()),
                    other => other,
                })?;
            let terms = model.terms(&tape, &g);
            if !terms.elbo.is_finite() {
                return Err(Error::Divergence(where_()));
            }
            let mut grads = tape.backward(g.loss)?;
            let grads: Vec<_> = params.into_iter().map(|p| grads.take(p)).collect();
            opt.step(model.params_mut(), &grads)?;
            let w = idx.len() as f64;
            elbo += terms.elbo * w;
            rec += terms.reconstruction * w;
            kl += terms.kl * w;
            seen += idx.len();
        }
        let n = seen as f64;
        log::debug!("vae epoch {epoch}: elbo {:.4}", elbo / n);
        model.trace.push(EpochLoss {
            epoch,
            elbo: elbo / n,
            reconstruction: rec / n,
            kl: kl / n,
        });
    }
    model.trained = true;
    Ok(model)
}
