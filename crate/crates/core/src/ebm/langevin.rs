use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;

/// A differentiable energy over rows. Implementations must not change while
/// sampling.
pub trait Energy {
    fn dim(&self) -> usize;

    /// Energy of every row and, row by row, its gradient with respect to the input.
    fn energy_and_grad(&self, x: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)>;
}

impl Energy for Mlp {
    fn dim(&self) -> usize {
        self.input_dim()
    }

    fn energy_and_grad(&self, x: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        let (out, grad) = self.input_gradient(x)?;
        Ok((out.sum_axis(Axis(1)), grad))
    }
}

/// How chains are started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChainInit {
    /// Fresh uniform draws from the bounding box of the data.
    Uniform,
    /// Persistent chains: restart from stored samples, or from a uniform draw
    /// with probability `reinit_prob`. `capacity` defaults to ten batches of
    /// negatives.
    ReplayBuffer {
        capacity: Option<usize>,
        reinit_prob: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LangevinConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Standard deviation of the injected noise; `None` means `sqrt(step_size)`.
    pub noise_scale: Option<f64>,
    /// Elementwise bound on the energy gradient, applied every step.
    pub grad_clip: Option<f64>,
    pub init: ChainInit,
    pub seed: u64,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            step_size: 0.01,
            noise_scale: None,
            grad_clip: Some(0.03),
            init: ChainInit::ReplayBuffer {
                capacity: None,
                reinit_prob: 0.05,
            },
            seed: 0,
        }
    }
}

impl LangevinConfig {
    pub fn noise(&self) -> f64 {
        self.noise_scale.unwrap_or_else(|| self.step_size.sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("Langevin steps must be >= 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config("Langevin step size must be > 0".into()));
        }
        if !(self.noise() >= 0.0 && self.noise().is_finite()) {
            return Err(Error::Config("Langevin noise scale must be >= 0".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("gradient clip must be > 0".into()));
            }
        }
        if let ChainInit::ReplayBuffer {
            capacity,
            reinit_prob,
        } = &self.init
        {
            if !(0.0..=1.0).contains(reinit_prob) {
                return Err(Error::Config(format!(
                    "reinit probability must lie in [0, 1], got {reinit_prob}"
                )));
            }
            if *capacity == Some(0) {
                return Err(Error::Config("replay buffer capacity must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Run `steps` iterations of `x <- x - eta * clip(grad E(x)) + noise * xi`.
pub fn langevin_sample_with<E: Energy + ?Sized, R: Rng + ?Sized>(
    energy: &E,
    x0: &Array2<f64>,
    config: &LangevinConfig,
    rng: &mut R,
) -> Result<Array2<f64>> {
    config.validate()?;
    if x0.ncols() != energy.dim() {
        return Err(Error::Shape(format!(
            "chains have {} columns, energy expects {}",
            x0.ncols(),
            energy.dim()
        )));
    }
    let noise = config.noise();
    let mut x = x0.clone();
    for step in 0..config.steps {
        let (_, mut g) = energy.energy_and_grad(&x).map_err(|e| match e {
            Error::NonFinite(_) => Error::Divergence(format!("Langevin energy at step {step}")),
            other => other,
        })?;
        if let Some(c) = config.grad_clip {
            g.mapv_inplace(|v| v.clamp(-c, c));
        }
        x.scaled_add(-config.step_size, &g);
        if noise > 0.0 {
            x.mapv_inplace(|v| {
                let xi: f64 = StandardNormal.sample(rng);
                v + noise * xi
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("Langevin iterate at step {step}")));
        }
    }
    Ok(x)
}

/// [`langevin_sample_with`] seeded from `config.seed`.
pub fn langevin_sample<E: Energy + ?Sized>(energy: &E, x0: &Array2<f64>, config: &LangevinConfig) -> Result<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    langevin_sample_with(energy, x0, config, &mut rng)
}

/// Axis-aligned bounding box of a set of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataBox {
    pub lo: Array1<f64>,
    pub hi: Array1<f64>,
}

impl DataBox {
    pub fn of(rows: &Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::Validation("bounding box of zero rows".into()));
        }
        let lo = rows.fold_axis(Axis(0), f64::INFINITY, |a, &b| a.min(b));
        let hi = rows.fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b));
        Ok(Self { lo, hi })
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let d = self.lo.len();
        let mut out = Array2::zeros((n, d));
        for mut row in out.outer_iter_mut() {
            for j in 0..d {
                let u: f64 = rng.random();
                row[j] = self.lo[j] + (self.hi[j] - self.lo[j]) * u;
            }
        }
        out
    }
}

/// Chain starting points for one network, persistent across batches when
/// configured as a replay buffer.
#[derive(Debug, Clone)]
pub struct ChainPool {
    bounds: DataBox,
    init: ChainInit,
    buffer: Array2<f64>,
}

impl ChainPool {
    pub fn new<R: Rng + ?Sized>(bounds: DataBox, init: ChainInit, n_chains: usize, rng: &mut R) -> Self {
        let buffer = match &init {
            ChainInit::Uniform => Array2::zeros((0, bounds.lo.len())),
            ChainInit::ReplayBuffer { capacity, .. } => {
                let cap = capacity.unwrap_or(10 * n_chains).max(n_chains);
                bounds.sample(cap, rng)
            }
        };
        Self {
            bounds,
            init,
            buffer,
        }
    }

    pub fn capacity(&self) -> usize {
        self.buffer.nrows()
    }

    /// Draw `n` starting points; returns them with the buffer slots they
    /// should be written back to.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Array2<f64>, Vec<usize>) {
        match &self.init {
            ChainInit::Uniform => (self.bounds.sample(n, rng), Vec::new()),
            ChainInit::ReplayBuffer { reinit_prob, .. } => {
                let cap = self.buffer.nrows();
                let slots = rand::seq::index::sample(rng, cap, n.min(cap)).into_vec();
                let mut x = self.buffer.select(Axis(0), &slots);
                for mut row in x.outer_iter_mut() {
                    if rng.random::<f64>() < *reinit_prob {
                        row.assign(&self.bounds.sample(1, rng).row(0));
                    }
                }
                (x, slots)
            }
        }
    }

    pub fn store(&mut self, samples: &Array2<f64>, slots: &[usize]) {
        for (row, &s) in samples.outer_iter().zip(slots) {
            self.buffer.row_mut(s).assign(&row);
        }
    }
}
