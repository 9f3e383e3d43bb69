use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::langevin::{langevin_sample_with, ChainPool, DataBox};
use super::{EbmLossWeights, EmConfig, EnergyPair, EpochTrace, PuSurrogate};
use crate::error::{Error, Result};
use crate::nn::{Adamax, Mlp, MlpConfig, Mode, Tape, Var};

/// Rows seen by one optimization step. Sample blocks may be empty when the
/// matching contrastive term is switched off.
#[derive(Debug, Clone, Copy)]
pub struct BatchRows<'a> {
    pub lp: &'a Array2<f64>,
    pub u: &'a Array2<f64>,
    pub samples_p: &'a Array2<f64>,
    pub samples_q: &'a Array2<f64>,
}

/// Loss terms of one batch and parameter gradients for each network. A
/// network that no active term touches is not run and gets zero gradients.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub terms: EpochTrace,
    pub grads_p: Vec<Array2<f64>>,
    pub grads_q: Vec<Array2<f64>>,
}

fn stack(blocks: &[&Array2<f64>]) -> Result<Array2<f64>> {
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

/// Column of weights `value` over `len` rows starting at `start`, zero elsewhere.
fn block_weights(total: usize, parts: &[(usize, usize, f64)]) -> Array2<f64> {
    let mut w = Array2::zeros((total, 1));
    for &(start, len, value) in parts {
        w.slice_mut(ndarray::s![start..start + len, ..]).fill(value);
    }
    w
}

fn zero_grads(net: &Mlp) -> Vec<Array2<f64>> {
    net.params().iter().map(|(_, p)| Array2::zeros(p.dim())).collect()
}

/// Contrastive-divergence loss `mean g(data) - mean g(samples)` of one
/// network and its parameter gradients. Both blocks go through a single
/// train-mode forward pass so they share batch statistics; samples are
/// constants, so nothing flows back through the sampler.
pub fn cd_loss_grad(net: &Mlp, data: &Array2<f64>, samples: &Array2<f64>) -> Result<(f64, Vec<Array2<f64>>)> {
    if data.ncols() != samples.ncols() || data.ncols() != net.input_dim() {
        return Err(Error::Shape(format!(
            "data has {} columns, samples {}, network expects {}",
            data.ncols(),
            samples.ncols(),
            net.input_dim()
        )));
    }
    if data.nrows() == 0 || samples.nrows() == 0 {
        return Err(Error::Validation("contrastive divergence needs data and samples".into()));
    }
    let mut work = net.clone();
    let rows = stack(&[data, samples])?;
    let (n, m) = (data.nrows(), samples.nrows());
    let mut tape = Tape::new();
    let x = tape.constant(rows);
    let bound = work.forward(&mut tape, x, Mode::Train)?;
    let w = block_weights(n + m, &[(0, n, 1.0 / n as f64), (n, m, -1.0 / m as f64)]);
    let loss = tape.weighted_sum(bound.output, w)?;
    let value = tape.item(loss);
    let mut grads = tape.backward(loss)?;
    Ok((value, bound.params.iter().map(|&p| grads.take(p)).collect()))
}

/// The full objective on one batch. Running statistics of every network that
/// is evaluated are updated.
pub fn batch_loss(
    g_p: &mut Mlp,
    g_q: &mut Mlp,
    rows: BatchRows<'_>,
    weights: &EbmLossWeights,
    pu_loss: PuSurrogate,
) -> Result<BatchLoss> {
    let (n_l, n_u) = (rows.lp.nrows(), rows.u.nrows());
    if n_l == 0 || n_u == 0 {
        return Err(Error::Validation("a batch needs labeled-positive and unlabeled rows".into()));
    }
    let use_cd_p = weights.alpha > 0.0;
    let use_cd_q = weights.beta > 0.0;
    let use_pu = weights.gamma > 0.0;
    let run_p = use_cd_p || use_pu;
    let run_q = use_cd_q || use_pu;
    if use_cd_p && rows.samples_p.nrows() == 0 || use_cd_q && rows.samples_q.nrows() == 0 {
        return Err(Error::Validation("contrastive terms need Langevin samples".into()));
    }

    let mut tape = Tape::new();
    let mut terms = EpochTrace::default();
    let mut loss_parts: Vec<Var> = Vec::new();

    // Each network sees [LP; U; own samples] in one pass.
    let run = |net: &mut Mlp, tape: &mut Tape, samples: &Array2<f64>, with_samples: bool| -> Result<(Var, Vec<Var>, usize)> {
        let blocks: Vec<&Array2<f64>> = if with_samples {
            vec![rows.lp, rows.u, samples]
        } else {
            vec![rows.lp, rows.u]
        };
        let x = stack(&blocks)?;
        let total = x.nrows();
        let input = tape.constant(x);
        let bound = net.forward(tape, input, Mode::Train)?;
        Ok((bound.output, bound.params, total))
    };
    let p = if run_p {
        Some(run(g_p, &mut tape, rows.samples_p, use_cd_p)?)
    } else {
        None
    };
    let q = if run_q {
        Some(run(g_q, &mut tape, rows.samples_q, use_cd_q)?)
    } else {
        None
    };

    if let (true, Some((out, _, total))) = (use_cd_p, &p) {
        let m = total - n_l - n_u;
        let w = block_weights(*total, &[(0, n_l, 1.0 / n_l as f64), (n_l + n_u, m, -1.0 / m as f64)]);
        let cd = tape.weighted_sum(*out, w)?;
        terms.cd_p = tape.item(cd);
        loss_parts.push(tape.scale(cd, weights.alpha));
    }
    if let (true, Some((out, _, total))) = (use_cd_q, &q) {
        let n = n_l + n_u;
        let m = total - n;
        let w = block_weights(*total, &[(0, n, 1.0 / n as f64), (n, m, -1.0 / m as f64)]);
        let cd = tape.weighted_sum(*out, w)?;
        terms.cd_q = tape.item(cd);
        loss_parts.push(tape.scale(cd, weights.beta));
    }
    if use_pu {
        let (po, qo) = (p.as_ref().expect("run").0, q.as_ref().expect("run").0);
        let p_l = tape.slice_rows(po, 0, n_l)?;
        let q_l = tape.slice_rows(qo, 0, n_l)?;
        let p_u = tape.slice_rows(po, n_l, n_l + n_u)?;
        let q_u = tape.slice_rows(qo, n_l, n_l + n_u)?;
        let f_l = tape.sub(q_l, p_l)?;
        let f_u = tape.sub(q_u, p_u)?;
        let neg_f_l = tape.neg(f_l);
        let s = tape.sigmoid(neg_f_l);
        let pos_risk = tape.mean(s);
        let s = tape.sigmoid(f_u);
        let u_neg_risk = tape.mean(s);
        let risk = match pu_loss {
            PuSurrogate::Sigmoid => tape.add(pos_risk, u_neg_risk)?,
            PuSurrogate::NonNegative { prior } => {
                let s = tape.sigmoid(f_l);
                let p_neg_risk = tape.mean(s);
                let scaled = tape.scale(p_neg_risk, prior);
                let neg_risk = tape.sub(u_neg_risk, scaled)?;
                let weighted_pos = tape.scale(pos_risk, prior);
                if tape.item(neg_risk) >= 0.0 {
                    tape.add(weighted_pos, neg_risk)?
                } else {
                    weighted_pos
                }
            }
        };
        terms.pu = tape.item(risk);
        loss_parts.push(tape.scale(risk, weights.gamma));
    }
    if weights.lambda > 0.0 {
        let mut reg = 0.0;
        for (out, _, _) in p.iter().chain(q.iter()) {
            let sq = tape.square(*out);
            let m = tape.mean(sq);
            reg += tape.item(m);
            loss_parts.push(tape.scale(m, weights.lambda));
        }
        terms.reg = reg;
    }

    let Some((&first, rest)) = loss_parts.split_first() else {
        return Ok(BatchLoss {
            terms,
            grads_p: zero_grads(g_p),
            grads_q: zero_grads(g_q),
        });
    };
    let mut total = first;
    for &part in rest {
        total = tape.add(total, part)?;
    }
    terms.total = tape.item(total);
    let mut grads = tape.backward(total)?;
    let collect = |grads: &mut crate::nn::Gradients, run: &Option<(Var, Vec<Var>, usize)>, net: &Mlp| match run {
        Some((_, params, _)) => params.iter().map(|&v| grads.take(v)).collect(),
        None => zero_grads(net),
    };
    let grads_p = collect(&mut grads, &p, g_p);
    let grads_q = collect(&mut grads, &q, g_q);
    Ok(BatchLoss {
        terms,
        grads_p,
        grads_q,
    })
}

fn divergence(epoch: usize, batch: usize, trace: &[EpochTrace], what: &str) -> Error {
    let history: Vec<String> = trace.iter().map(|t| format!("{:.4}", t.total)).collect();
    Error::Divergence(format!(
        "{what} at epoch {epoch}, batch {batch} (epoch totals so far: [{}])",
        history.join(", ")
    ))
}

/// Train both energy networks jointly on labeled-positive rows `lp` and
/// unlabeled rows `u`.
pub fn train_pude_em(lp: &Array2<f64>, u: &Array2<f64>, config: &EmConfig, seed: u64) -> Result<EnergyPair> {
    config.validate()?;
    if lp.nrows() == 0 || u.nrows() == 0 {
        return Err(Error::Validation("training needs labeled-positive and unlabeled rows".into()));
    }
    if lp.ncols() != u.ncols() {
        return Err(Error::Shape(format!(
            "labeled rows have {} columns, unlabeled rows {}",
            lp.ncols(),
            u.ncols()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net_cfg = MlpConfig {
        input_dim: lp.ncols(),
        ..config.network.clone()
    };
    let g_p = Mlp::new(net_cfg.clone(), &mut rng)?;
    let g_q = Mlp::new(net_cfg, &mut rng)?;
    let mut pair = EnergyPair::untrained(g_p, g_q, config.clone());

    let n_neg = config.n_negatives();
    let all = stack(&[lp, u])?;
    let mut pool_p = ChainPool::new(DataBox::of(lp)?, config.langevin.init.clone(), n_neg, &mut rng);
    let mut pool_q = ChainPool::new(DataBox::of(&all)?, config.langevin.init.clone(), n_neg, &mut rng);
    let mut opt_p = Adamax::new(config.train.optimizer.clone());
    let mut opt_q = Adamax::new(config.train.optimizer.clone());
    let batch = config.train.batch_size;
    let lp_batch = lp.nrows().min(batch);
    let w = config.weights;
    let empty = Array2::zeros((0, lp.ncols()));

    let mut u_order: Vec<usize> = (0..u.nrows()).collect();
    for epoch in 0..config.train.epochs {
        u_order.shuffle(&mut rng);
        let mut sums = EpochTrace {
            epoch,
            ..EpochTrace::default()
        };
        let mut n_batches = 0usize;
        for (b, u_idx) in u_order.chunks(batch).enumerate() {
            let lp_idx = rand::seq::index::sample(&mut rng, lp.nrows(), lp_batch).into_vec();
            let lp_b = lp.select(Axis(0), &lp_idx);
            let u_b = u.select(Axis(0), u_idx);
            let sample = |pool: &mut ChainPool, net: &Mlp, active: bool, rng: &mut ChaCha8Rng| -> Result<Array2<f64>> {
                if !active {
                    return Ok(empty.clone());
                }
                let (x0, slots) = pool.draw(n_neg, rng);
                let x = langevin_sample_with(net, &x0, &config.langevin, rng)
                    .map_err(|e| match e {
                        Error::Divergence(what) => divergence(epoch, b, &pair.trace, &what),
                        other => other,
                    })?;
                pool.store(&x, &slots);
                Ok(x)
            };
            let s_p = sample(&mut pool_p, &pair.g_p, w.alpha > 0.0, &mut rng)?;
            let s_q = sample(&mut pool_q, &pair.g_q, w.beta > 0.0, &mut rng)?;
            let rows = BatchRows {
                lp: &lp_b,
                u: &u_b,
                samples_p: &s_p,
                samples_q: &s_q,
            };
            let out = batch_loss(&mut pair.g_p, &mut pair.g_q, rows, &w, config.pu_loss)
                .map_err(|e| match e {
                    Error::NonFinite(what) => divergence(epoch, b, &pair.trace, &what),
                    other => other,
                })?;
            if !out.terms.total.is_finite() {
                return Err(divergence(epoch, b, &pair.trace, "non-finite loss"));
            }
            opt_p.step(pair.g_p.params_mut(), &out.grads_p)?;
            opt_q.step(pair.g_q.params_mut(), &out.grads_q)?;
            sums.total += out.terms.total;
            sums.cd_p += out.terms.cd_p;
            sums.cd_q += out.terms.cd_q;
            sums.pu += out.terms.pu;
            sums.reg += out.terms.reg;
            n_batches += 1;
        }
        let k = n_batches as f64;
        let t = EpochTrace {
            epoch,
            total: sums.total / k,
            cd_p: sums.cd_p / k,
            cd_q: sums.cd_q / k,
            pu: sums.pu / k,
            reg: sums.reg / k,
        };
        log::debug!("pude-em epoch {epoch}: {t:?}");
        pair.trace.push(t);
    }
    pair.mark_trained();
    Ok(pair)
}
