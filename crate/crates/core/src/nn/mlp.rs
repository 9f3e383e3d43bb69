use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Shape of a fully connected network.
///
/// `layer_count` counts linear layers: `layer_count - 1` hidden blocks of
/// `linear -> batchnorm -> leaky ReLU`, then a plain linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub layer_count: usize,
    pub hidden_width: usize,
    pub leaky_slope: f64,
    pub use_batchnorm: bool,
    pub output_dim: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            input_dim: 1,
            layer_count: 6,
            hidden_width: 200,
            leaky_slope: 0.01,
            use_batchnorm: true,
            output_dim: 1,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl MlpConfig {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("network dimensions must be >= 1".into()));
        }
        if self.layer_count == 0 {
            return Err(Error::Config("layer_count must be >= 1".into()));
        }
        if self.hidden_width == 0 {
            return Err(Error::Config("hidden_width must be >= 1".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || self.bn_eps <= 0.0 {
            return Err(Error::Config("invalid batchnorm momentum/epsilon".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batchnorm uses batch statistics and updates its running averages.
    Train,
    /// Batchnorm uses running statistics; rows are scored independently.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array2<f64>,
    pub beta: Array2<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: Array2::ones((1, width)),
            beta: Array2::zeros((1, width)),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `fan_in x fan_out`
    pub weight: Array2<f64>,
    /// Absent when a batchnorm follows (its shift makes the bias redundant).
    pub bias: Option<Array2<f64>>,
    pub norm: Option<BatchNorm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    config: MlpConfig,
    layers: Vec<Layer>,
}

/// Output node of a forward pass plus the tape nodes holding each parameter,
/// in [`Mlp::params`] order.
#[derive(Debug, Clone)]
pub struct Bound {
    pub output: Var,
    pub params: Vec<Var>,
}

impl Mlp {
    /// Kaiming-uniform weights (fan-in, leaky-ReLU gain), zero biases.
    pub fn new<R: Rng + ?Sized>(config: MlpConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.layer_count);
        let mut fan_in = config.input_dim;
        for i in 0..config.layer_count {
            let last = i + 1 == config.layer_count;
            let fan_out = if last {
                config.output_dim
            } else {
                config.hidden_width
            };
            let gain = if last {
                1.0
            } else {
                (2.0 / (1.0 + config.leaky_slope * config.leaky_slope)).sqrt()
            };
            let bound = gain * (3.0 / fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let weight = Array2::from_shape_fn((fan_in, fan_out), |_| dist.sample(rng));
            let norm = (!last && config.use_batchnorm).then(|| BatchNorm::new(fan_out));
            let bias = norm.is_none().then(|| Array2::zeros((1, fan_out)));
            layers.push(Layer { weight, bias, norm });
            fan_in = fan_out;
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    /// Named parameters in a fixed order: per layer weight, bias, gamma, beta.
    pub fn params(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), &layer.weight));
            if let Some(b) = &layer.bias {
                out.push((format!("layer{i}.bias"), b));
            }
            if let Some(bn) = &layer.norm {
                out.push((format!("layer{i}.bn.gamma"), &bn.gamma));
                out.push((format!("layer{i}.bn.beta"), &bn.beta));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.weight"), &mut layer.weight));
            if let Some(b) = &mut layer.bias {
                out.push((format!("layer{i}.bias"), b));
            }
            if let Some(bn) = &mut layer.norm {
                out.push((format!("layer{i}.bn.gamma"), &mut bn.gamma));
                out.push((format!("layer{i}.bn.beta"), &mut bn.beta));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<()> {
        let (_, cols) = tape.shape(x);
        if cols != self.config.input_dim {
            return Err(Error::Shape(format!(
                "network expects {} input columns, batch has {cols}",
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Record the network on `tape`. Parameters become gradient-tracked leaves
    /// when `track` is set, constants otherwise. Returns batch statistics for
    /// every normalized layer when running in train mode.
    #[allow(clippy::type_complexity)]
    fn record(
        &self,
        tape: &mut Tape,
        x: Var,
        mode: Mode,
        track: bool,
    ) -> Result<(Var, Vec<Var>, Vec<(Array1<f64>, Array1<f64>)>)> {
        self.check_input(tape, x)?;
        let bind = |tape: &mut Tape, a: &Array2<f64>, params: &mut Vec<Var>| {
            let v = if track {
                tape.leaf(a.clone())
            } else {
                tape.constant(a.clone())
            };
            params.push(v);
            v
        };
        let mut params = Vec::new();
        let mut stats = Vec::new();
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = bind(tape, &layer.weight, &mut params);
            h = tape.matmul(h, w)?;
            if let Some(b) = &layer.bias {
                let b = bind(tape, b, &mut params);
                h = tape.add_row(h, b)?;
            }
            if let Some(bn) = &layer.norm {
                let gamma = bind(tape, &bn.gamma, &mut params);
                let beta = bind(tape, &bn.beta, &mut params);
                let normed = match mode {
                    Mode::Train => {
                        let (z, mean, var) = tape.standardize(h, self.config.bn_eps)?;
                        stats.push((mean, var));
                        z
                    }
                    Mode::Eval => {
                        let inv = bn
                            .running_var
                            .mapv(|v| 1.0 / (v + self.config.bn_eps).sqrt());
                        tape.col_affine(h, &bn.running_mean, inv)?
                    }
                };
                let scaled = tape.mul_row(normed, gamma)?;
                h = tape.add_row(scaled, beta)?;
            }
            if i != last {
                h = tape.leaky_relu(h, self.config.leaky_slope);
            }
        }
        Ok((h, params, stats))
    }

    /// Forward pass with gradient-tracked parameters. Train mode updates the
    /// batchnorm running statistics and needs at least two rows.
    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Bound> {
        let (output, params, stats) = self.record(tape, x, mode, true)?;
        tape.ensure_finite(output, "network output")?;
        if mode == Mode::Train {
            self.update_running_stats(&stats, tape.shape(x).0);
        }
        Ok(Bound { output, params })
    }

    /// Eval-mode forward pass with parameters recorded as constants. Gradients
    /// can still flow to `x`.
    pub fn forward_frozen(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (output, _, _) = self.record(tape, x, Mode::Eval, false)?;
        tape.ensure_finite(output, "network output")?;
        Ok(output)
    }

    /// Eval-mode outputs for a batch of rows.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.evaluate(x, Mode::Eval)
    }

    /// Outputs without recording a tape. Train mode normalizes with batch
    /// statistics but leaves the running averages untouched.
    pub fn evaluate(&self, x: &Array2<f64>, mode: Mode) -> Result<Array2<f64>> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "network expects {} input columns, batch has {}",
                self.config.input_dim,
                x.ncols()
            )));
        }
        let eps = self.config.bn_eps;
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weight);
            if let Some(b) = &layer.bias {
                h += b;
            }
            if let Some(bn) = &layer.norm {
                let (mean, var) = match mode {
                    Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
                    Mode::Train => {
                        if h.nrows() < 2 {
                            return Err(Error::Shape(format!(
                                "batch statistics need at least 2 rows, got {}",
                                h.nrows()
                            )));
                        }
                        let mean = h.mean_axis(Axis(0)).expect("non-empty");
                        let var = h.var_axis(Axis(0), 0.0);
                        (mean, var)
                    }
                };
                let scale = var.mapv(|v| 1.0 / (v + eps).sqrt()) * bn.gamma.row(0);
                h -= &mean.insert_axis(Axis(0));
                h *= &scale.insert_axis(Axis(0));
                h += &bn.beta;
            }
            if i != last {
                let slope = self.config.leaky_slope;
                h.mapv_inplace(|z| if z > 0.0 { z } else { slope * z });
            }
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(h)
    }

    /// Eval-mode outputs and the gradient of their sum with respect to `x`,
    /// without a tape. Rows are independent in eval mode, so row `i` of the
    /// gradient is the input gradient of output row `i`.
    pub fn input_gradient(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "network expects {} input columns, batch has {}",
                self.config.input_dim,
                x.ncols()
            )));
        }
        let slope = self.config.leaky_slope;
        let last = self.layers.len() - 1;
        // per layer: elementwise factor from normalization and activation
        let mut factors: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weight);
            if let Some(b) = &layer.bias {
                h += b;
            }
            let mut factor = Array2::ones(h.dim());
            if let Some(bn) = &layer.norm {
                let scale = bn
                    .running_var
                    .mapv(|v| 1.0 / (v + self.config.bn_eps).sqrt())
                    * bn.gamma.row(0);
                h -= &bn.running_mean.view().insert_axis(Axis(0));
                h *= &scale.view().insert_axis(Axis(0));
                h += &bn.beta;
                factor *= &scale.insert_axis(Axis(0));
            }
            if i != last {
                ndarray::Zip::from(&mut h).and(&mut factor).for_each(|v, f| {
                    if *v <= 0.0 {
                        *v *= slope;
                        *f *= slope;
                    }
                });
            }
            factors.push(factor);
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        let mut g = Array2::ones(h.dim());
        for (layer, factor) in self.layers.iter().zip(&factors).rev() {
            g *= factor;
            g = g.dot(&layer.weight.t());
        }
        Ok((h, g))
    }

    /// The `k`-th parameter in [`Self::params`] order.
    pub fn param_mut(&mut self, k: usize) -> Option<&mut Array2<f64>> {
        self.params_mut().into_iter().nth(k).map(|(_, p)| p)
    }

    fn update_running_stats(&mut self, stats: &[(Array1<f64>, Array1<f64>)], n: usize) {
        let m = self.config.bn_momentum;
        let unbias = n as f64 / (n as f64 - 1.0);
        let norms = self.layers.iter_mut().filter_map(|l| l.norm.as_mut());
        for (bn, (mean, var)) in norms.zip(stats) {
            bn.running_mean = &bn.running_mean * (1.0 - m) + mean * m;
            bn.running_var = &bn.running_var * (1.0 - m) + var * (m * unbias);
        }
    }

    /// Zero the weights of the final linear layer (and its bias).
    pub fn zero_output_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.weight.fill(0.0);
            if let Some(b) = &mut last.bias {
                b.fill(0.0);
            }
        }
    }

    /// Add `c` to every output (shifts the final bias).
    pub fn shift_output(&mut self, c: f64) {
        if let Some(last) = self.layers.last_mut() {
            let b = last
                .bias
                .get_or_insert_with(|| Array2::zeros((1, last.weight.ncols())));
            b.mapv_inplace(|v| v + c);
        }
    }
}
