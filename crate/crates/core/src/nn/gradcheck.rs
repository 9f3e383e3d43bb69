//! Central-difference gradient checking for [`Mlp`] networks.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mlp::{Mlp, Mode};
use super::tape::Tape;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LayerError {
    pub name: String,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<LayerError>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn from_pairs(names: Vec<String>, analytic: &[Array2<f64>], numeric: &[Array2<f64>]) -> Self {
        let entries: Vec<_> = names
            .into_iter()
            .zip(analytic.iter().zip(numeric))
            .map(|(name, (a, n))| LayerError {
                name,
                rel_error: relative_error(a, n),
            })
            .collect();
        let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
        Self {
            entries,
            max_rel_error,
        }
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }

    pub fn worst(&self) -> Option<&LayerError> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// `‖a - n‖₂ / max(‖a‖₂, ‖n‖₂)`, and 0 when both are (numerically) zero.
pub fn relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    let norm = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = norm(&(analytic - numeric));
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `at`, one coordinate at a time.
pub fn numeric_gradient<F>(mut f: F, at: &Array2<f64>, h: f64) -> Array2<f64>
where
    F: FnMut(&Array2<f64>) -> f64,
{
    let mut x = at.clone();
    let mut g = Array2::zeros(at.dim());
    for idx in 0..at.len() {
        let (r, c) = (idx / at.ncols(), idx % at.ncols());
        let orig = x[[r, c]];
        x[[r, c]] = orig + h;
        let up = f(&x);
        x[[r, c]] = orig - h;
        let down = f(&x);
        x[[r, c]] = orig;
        g[[r, c]] = (up - down) / (2.0 * h);
    }
    g
}

/// Fixed random projection so the checked loss has no symmetric structure.
fn projection(rows: usize, cols: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn projected_loss(net: &Mlp, batch: &Array2<f64>, mode: Mode, proj: &Array2<f64>) -> Result<f64> {
    let out = net.evaluate(batch, mode)?;
    Ok((out * proj).sum())
}

/// Analytic gradients of `sum(net(batch) ∘ R)` for a fixed projection `R`,
/// for every parameter followed by the input batch.
pub fn analytic_gradients(net: &Mlp, batch: &Array2<f64>, mode: Mode) -> Result<(Vec<String>, Vec<Array2<f64>>)> {
    let mut net = net.clone();
    let proj = projection(batch.nrows(), net.config().output_dim);
    let mut tape = Tape::new();
    let x = tape.leaf(batch.clone());
    let bound = net.forward(&mut tape, x, mode)?;
    let loss = tape.weighted_sum(bound.output, proj)?;
    let grads = tape.backward(loss)?;
    let mut names: Vec<String> = net.params().into_iter().map(|(n, _)| n).collect();
    names.push("input".into());
    let mut out: Vec<_> = bound.params.iter().map(|&v| grads.wrt(v)).collect();
    out.push(grads.wrt(x));
    Ok((names, out))
}

/// Normalization and activation of layer `i` applied to its pre-normalization
/// activations `z`, which stack independent batches of `group` rows.
fn layer_tail(net: &Mlp, i: usize, mut z: Array2<f64>, group: usize, mode: Mode) -> Result<Array2<f64>> {
    let cfg = net.config();
    let layer = &net.layers()[i];
    if let Some(bn) = &layer.norm {
        for mut block in z.axis_chunks_iter_mut(Axis(0), group) {
            let (mean, var) = match mode {
                Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
                Mode::Train => {
                    if block.nrows() < 2 {
                        return Err(Error::Shape("batch statistics need at least 2 rows".into()));
                    }
                    (block.mean_axis(Axis(0)).expect("non-empty"), block.var_axis(Axis(0), 0.0))
                }
            };
            let scale = var.mapv(|v| 1.0 / (v + cfg.bn_eps).sqrt()) * bn.gamma.row(0);
            block -= &mean.insert_axis(Axis(0));
            block *= &scale.insert_axis(Axis(0));
            block += &bn.beta;
        }
    }
    if i + 1 != net.layers().len() {
        let slope = cfg.leaky_slope;
        z.mapv_inplace(|v| if v > 0.0 { v } else { slope * v });
    }
    Ok(z)
}

fn linear(net: &Mlp, i: usize, h: &Array2<f64>) -> Array2<f64> {
    let layer = &net.layers()[i];
    let mut z = h.dot(&layer.weight);
    if let Some(b) = &layer.bias {
        z += b;
    }
    z
}

/// Projected loss of every `group`-row batch stacked in `z`, the
/// pre-normalization activations of layer `start`.
fn group_losses(
    net: &Mlp,
    start: usize,
    z: Array2<f64>,
    group: usize,
    mode: Mode,
    proj: &Array2<f64>,
) -> Result<Vec<f64>> {
    let mut h = layer_tail(net, start, z, group, mode)?;
    for i in start + 1..net.layers().len() {
        h = layer_tail(net, i, linear(net, i, &h), group, mode)?;
    }
    Ok(h.axis_chunks_iter(Axis(0), group)
        .map(|block| (&block * proj).sum())
        .collect())
}

/// Central differences for the weight (and bias, if any) of layer `k`.
/// Perturbing one coordinate only moves one column of the layer's
/// pre-normalization activations, so variants are batched from there on.
fn layer_numeric(net: &Mlp, k: usize, batch: &Array2<f64>, mode: Mode, h: f64, proj: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
    const CHUNK: usize = 64;
    let rows = batch.nrows();
    let mut input = batch.clone();
    for i in 0..k {
        input = layer_tail(net, i, linear(net, i, &input), rows, mode)?;
    }
    let z = linear(net, k, &input);
    let layer = &net.layers()[k];
    let (fan_in, fan_out) = layer.weight.dim();

    // (row of the weight, or None for the bias; column)
    let mut coords: Vec<(Option<usize>, usize)> =
        (0..fan_in).flat_map(|i| (0..fan_out).map(move |j| (Some(i), j))).collect();
    if layer.bias.is_some() {
        coords.extend((0..fan_out).map(|j| (None, j)));
    }
    let mut grads = Vec::with_capacity(coords.len());
    for chunk in coords.chunks(CHUNK) {
        let mut stacked = Array2::zeros((2 * chunk.len() * rows, fan_out));
        for (c, &(i, j)) in chunk.iter().enumerate() {
            for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
                let mut block = stacked.slice_mut(ndarray::s![(2 * c + s) * rows..(2 * c + s + 1) * rows, ..]);
                block.assign(&z);
                let mut col = block.column_mut(j);
                match i {
                    Some(i) => col.scaled_add(sign * h, &input.column(i)),
                    None => col += sign * h,
                }
            }
        }
        let losses = group_losses(net, k, stacked, rows, mode, proj)?;
        grads.extend(losses.chunks(2).map(|pm| (pm[0] - pm[1]) / (2.0 * h)));
    }
    let (w, b) = grads.split_at(fan_in * fan_out);
    let mut out = vec![Array2::from_shape_vec((fan_in, fan_out), w.to_vec()).expect("sized")];
    if layer.bias.is_some() {
        out.push(Array2::from_shape_vec((1, fan_out), b.to_vec()).expect("sized"));
    }
    Ok(out)
}

/// Central-difference counterpart of [`analytic_gradients`].
pub fn numeric_gradients(net: &Mlp, batch: &Array2<f64>, mode: Mode, h: f64) -> Result<Vec<Array2<f64>>> {
    if batch.ncols() != net.config().input_dim {
        return Err(Error::Shape(format!(
            "network expects {} input columns, batch has {}",
            net.config().input_dim,
            batch.ncols()
        )));
    }
    let proj = projection(batch.nrows(), net.config().output_dim);
    let mut work = net.clone();
    let mut failure: Option<Error> = None;
    let mut out = Vec::new();
    for k in 0..net.layers().len() {
        out.extend(layer_numeric(net, k, batch, mode, h, &proj)?);
        let Some(bn) = &net.layers()[k].norm else {
            continue;
        };
        for at in [bn.gamma.clone(), bn.beta.clone()] {
            let idx = out.len();
            let g = numeric_gradient(
                |p| {
                    work.param_mut(idx).expect("index in range").assign(p);
                    match projected_loss(&work, batch, mode, &proj) {
                        Ok(v) => v,
                        Err(e) => {
                            failure.get_or_insert(e);
                            f64::NAN
                        }
                    }
                },
                &at,
                h,
            );
            work.param_mut(idx).expect("index in range").assign(&at);
            out.push(g);
        }
    }
    let g = numeric_gradient(
        |x| match projected_loss(&work, x, mode, &proj) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        batch,
        h,
    );
    out.push(g);
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Compare backpropagated and central-difference gradients for every
/// parameter tensor (one entry per tensor) and for the input batch.
pub fn grad_check(net: &Mlp, batch: &Array2<f64>, mode: Mode, perturbation: f64) -> Result<GradCheckReport> {
    let (names, analytic) = analytic_gradients(net, batch, mode)?;
    let numeric = numeric_gradients(net, batch, mode, perturbation)?;
    Ok(GradCheckReport::from_pairs(names, &analytic, &numeric))
}
