use ndarray::{array, Array1, Array2, Axis};
use pude_core::ebm::{
    batch_loss, cd_loss_grad, langevin_sample, train_pude_em, BatchRows, ChainInit, EbmLossWeights, EmConfig, Energy, EnergyPair,
    LangevinConfig, PuSurrogate,
};
use pude_core::nn::{Mlp, MlpConfig, TrainConfig};
use pude_core::{Label, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

struct Quadratic {
    dim: usize,
    precision: f64,
}

impl Energy for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn energy_and_grad(&self, x: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        let e = x.map_axis(Axis(1), |r| 0.5 * self.precision * r.dot(&r));
        Ok((e, x * self.precision))
    }
}

struct Constant(usize);

impl Energy for Constant {
    fn dim(&self) -> usize {
        self.0
    }

    fn energy_and_grad(&self, x: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        Ok((Array1::from_elem(x.nrows(), 3.0), Array2::zeros(x.raw_dim())))
    }
}

fn noiseless(steps: usize, step_size: f64) -> LangevinConfig {
    LangevinConfig {
        steps,
        step_size,
        noise_scale: Some(0.0),
        grad_clip: None,
        init: ChainInit::Uniform,
        seed: 0,
    }
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

fn small_net(input: usize, seed: u64) -> Mlp {
    let cfg = MlpConfig {
        layer_count: 3,
        hidden_width: 8,
        ..MlpConfig::new(input, 1)
    };
    Mlp::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// A network whose batchnorm running statistics are not the identity, so
/// eval mode differs from a freshly built net.
fn warmed_net(input: usize, seed: u64) -> Mlp {
    let mut net = small_net(input, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for layer in net.layers_mut() {
        if let Some(bn) = &mut layer.norm {
            bn.running_mean.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            bn.running_var.mapv_inplace(|_| rng.random_range(0.5..2.0));
            bn.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
            bn.beta.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
    }
    net
}

#[test]
fn quadratic_energy_single_step() {
    let q = Quadratic { dim: 2, precision: 1.0 };
    let x = langevin_sample(&q, &array![[1.0, 1.0]], &noiseless(1, 0.01)).unwrap();
    assert!((x[[0, 0]] - 0.99).abs() < 1e-15 && (x[[0, 1]] - 0.99).abs() < 1e-15);
    let x0 = array![[0.3, -2.0], [4.0, 0.5]];
    let x = langevin_sample(&q, &x0, &noiseless(1, 0.2)).unwrap();
    assert_eq!(x, &x0 * 0.8);
}

#[test]
fn gradient_clip_bounds_the_move() {
    let q = Quadratic { dim: 1, precision: 1.0 };
    let cfg = LangevinConfig {
        grad_clip: Some(0.03),
        ..noiseless(1, 0.01)
    };
    let x = langevin_sample(&q, &array![[5.0]], &cfg).unwrap();
    assert!((x[[0, 0]] - (5.0 - 0.01 * 0.03)).abs() < 1e-15);
}

#[test]
fn constant_energy_is_a_fixed_point() {
    let x0 = random_matrix(5, 3, 1);
    let x = langevin_sample(&Constant(3), &x0, &noiseless(250, 0.05)).unwrap();
    assert_eq!(x, x0);
}

#[test]
fn noiseless_step_on_a_network_follows_its_input_gradient() {
    let net = warmed_net(3, 4);
    let x0 = random_matrix(6, 3, 5);
    let eta = 0.01;
    let x1 = langevin_sample(&net, &x0, &noiseless(1, eta)).unwrap();
    let h = 1e-5;
    let mut fd = Array2::zeros(x0.raw_dim());
    for i in 0..x0.nrows() {
        for j in 0..x0.ncols() {
            let mut up = x0.row(i).to_owned().insert_axis(Axis(0));
            let mut down = up.clone();
            up[[0, j]] += h;
            down[[0, j]] -= h;
            fd[[i, j]] = (net.predict(&up).unwrap()[[0, 0]] - net.predict(&down).unwrap()[[0, 0]]) / (2.0 * h);
        }
    }
    let expected = &x0 - &(&fd * eta);
    let moved = &x0 - &x1;
    let want = &x0 - &expected;
    let err = (&moved - &want).mapv(|v| v * v).sum().sqrt() / want.mapv(|v| v * v).sum().sqrt();
    assert!(err < 1e-3, "relative error {err}");
}

#[test]
fn fixed_seed_gives_identical_chains() {
    let net = warmed_net(2, 1);
    let x0 = random_matrix(10, 2, 3);
    let cfg = LangevinConfig {
        steps: 30,
        seed: 17,
        ..LangevinConfig::default()
    };
    let a = langevin_sample(&net, &x0, &cfg).unwrap();
    let b = langevin_sample(&net, &x0, &cfg).unwrap();
    let c = langevin_sample(&net, &x0, &LangevinConfig { seed: 18, ..cfg }).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn langevin_rejects_bad_input() {
    let q = Quadratic { dim: 2, precision: 1.0 };
    assert!(langevin_sample(&q, &Array2::zeros((1, 3)), &noiseless(1, 0.1)).is_err());
    assert!(langevin_sample(&q, &Array2::zeros((1, 2)), &noiseless(0, 0.1)).is_err());
    assert!(langevin_sample(&q, &Array2::zeros((1, 2)), &noiseless(1, 0.0)).is_err());
    let diverging = Quadratic { dim: 1, precision: -1e3 };
    assert!(matches!(
        langevin_sample(&diverging, &array![[1.0]], &noiseless(400, 1.0)),
        Err(pude_core::Error::Divergence(_))
    ));
}

#[test]
fn identical_data_and_samples_give_zero_gradient() {
    let net = small_net(3, 2);
    let data = random_matrix(8, 3, 9);
    let (loss, grads) = cd_loss_grad(&net, &data, &data).unwrap();
    // The two blocks cancel term by term; only summation-order rounding remains.
    assert!(loss.abs() < 1e-15, "loss {loss}");
    for g in &grads {
        let max = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(max < 1e-14, "max {max}");
    }
}

#[test]
fn linear_energy_gradient_is_the_mean_difference() {
    let cfg = MlpConfig {
        layer_count: 1,
        use_batchnorm: false,
        ..MlpConfig::new(3, 1)
    };
    let net = Mlp::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let data = random_matrix(10, 3, 1);
    let samples = random_matrix(7, 3, 2) + 1.0;
    let (_, grads) = cd_loss_grad(&net, &data, &samples).unwrap();
    let diff = data.mean_axis(Axis(0)).unwrap() - samples.mean_axis(Axis(0)).unwrap();
    for j in 0..3 {
        assert!((grads[0][[j, 0]] - diff[j]).abs() < 1e-12);
    }
    assert!(grads[1].iter().all(|v| v.abs() < 1e-12), "the bias cancels between the blocks");
}

#[test]
fn one_descent_step_narrows_the_energy_gap() {
    let net = small_net(2, 6);
    let data = random_matrix(16, 2, 7);
    let samples = random_matrix(16, 2, 8) * 2.0 + 1.0;
    let (gap, grads) = cd_loss_grad(&net, &data, &samples).unwrap();
    let lr = 1e-4;
    let mut stepped = net.clone();
    for (k, g) in grads.iter().enumerate() {
        stepped.param_mut(k).unwrap().scaled_add(-lr, g);
    }
    let (after, _) = cd_loss_grad(&stepped, &data, &samples).unwrap();
    // First-order hand step: the gap falls by lr * |grad|^2.
    let sq: f64 = grads.iter().map(|g| g.mapv(|v| v * v).sum()).sum();
    let predicted = gap - lr * sq;
    assert!(after < gap);
    assert!((after - predicted).abs() < 0.05 * lr * sq, "gap {gap} -> {after}, predicted {predicted}");
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let net = small_net(3, 2);
    assert!(cd_loss_grad(&net, &Array2::zeros((4, 3)), &Array2::zeros((4, 2))).is_err());
    assert!(cd_loss_grad(&net, &Array2::zeros((4, 2)), &Array2::zeros((4, 2))).is_err());
}

#[test]
fn contrastive_gradient_vanishes_at_the_model_distribution() {
    // Energy E(x) = w x^2 / 2 with w = 1, written as a linear net on x^2 / 2.
    // Langevin with noise sqrt(2 eta) targets exp(-E) = N(0, 1); data come
    // from the same N(0, 1).
    let cfg = MlpConfig {
        layer_count: 1,
        use_batchnorm: false,
        ..MlpConfig::new(1, 1)
    };
    let mut net = Mlp::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    net.layers_mut()[0].weight.fill(1.0);
    let n = 4000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let data = Array2::from_shape_simple_fn((n, 1), || normal.sample(&mut rng));
    let eta = 0.01;
    let sampler = LangevinConfig {
        steps: 1000,
        step_size: eta,
        noise_scale: Some((2.0 * eta).sqrt()),
        grad_clip: None,
        init: ChainInit::Uniform,
        seed: 5,
    };
    let x0 = Array2::from_shape_simple_fn((n, 1), || rng.random_range(-3.0..3.0));
    let samples = langevin_sample(&Quadratic { dim: 1, precision: 1.0 }, &x0, &sampler).unwrap();
    let feature = |x: &Array2<f64>| x.mapv(|v| 0.5 * v * v);
    let (_, grads) = cd_loss_grad(&net, &feature(&data), &feature(&samples)).unwrap();
    // Var(x^2 / 2) = 1/2 under N(0, 1) for each block.
    let se = (0.5 / n as f64 + 0.5 / n as f64).sqrt();
    assert!(grads[0][[0, 0]].abs() < 3.0 * se, "gradient {} vs se {se}", grads[0][[0, 0]]);
    let var = samples.mapv(|v| v * v).mean().unwrap();
    assert!((var - 1.0).abs() < 0.1, "sample variance {var}");
}

/// Eval-mode forward pass written with plain loops over the stored layers.
fn reference_forward(net: &Mlp, x: &Array2<f64>) -> Vec<f64> {
    let cfg = net.config();
    let layers = net.layers();
    x.outer_iter()
        .map(|row| {
            let mut h: Vec<f64> = row.to_vec();
            for (i, layer) in layers.iter().enumerate() {
                let (fan_in, fan_out) = layer.weight.dim();
                let mut next = vec![0.0; fan_out];
                for (o, v) in next.iter_mut().enumerate() {
                    for k in 0..fan_in {
                        *v += h[k] * layer.weight[[k, o]];
                    }
                    if let Some(b) = &layer.bias {
                        *v += b[[0, o]];
                    }
                    if let Some(bn) = &layer.norm {
                        *v = (*v - bn.running_mean[o]) / (bn.running_var[o] + cfg.bn_eps).sqrt() * bn.gamma[[0, o]]
                            + bn.beta[[0, o]];
                    }
                    if i + 1 != layers.len() && *v < 0.0 {
                        *v *= cfg.leaky_slope;
                    }
                }
                h = next;
            }
            h[0]
        })
        .collect()
}

#[test]
fn scores_match_an_independent_forward_pass() {
    let pair = EnergyPair::from_networks(warmed_net(3, 1), warmed_net(3, 2)).unwrap();
    let x = random_matrix(9, 3, 4);
    let got = pair.score(&x).unwrap();
    let q = reference_forward(&pair.g_q, &x);
    let p = reference_forward(&pair.g_p, &x);
    for i in 0..9 {
        assert!((got[i] - (q[i] - p[i])).abs() < 1e-6);
    }
}

#[test]
fn identical_networks_score_zero_and_predict_positive() {
    let net = warmed_net(2, 3);
    let pair = EnergyPair::from_networks(net.clone(), net).unwrap();
    let x = random_matrix(12, 2, 1);
    assert!(pair.score(&x).unwrap().iter().all(|&s| s == 0.0));
    assert!(pair.predict(&x).unwrap().iter().all(|l| *l == Label::Positive));
}

#[test]
fn swapping_the_networks_negates_scores() {
    let (a, b) = (warmed_net(2, 3), warmed_net(2, 4));
    let x = random_matrix(12, 2, 1);
    let s = EnergyPair::from_networks(a.clone(), b.clone()).unwrap().score(&x).unwrap();
    let t = EnergyPair::from_networks(b, a).unwrap().score(&x).unwrap();
    assert_eq!(s, -t);
}

#[test]
fn constant_shifts() {
    let (a, b) = (warmed_net(2, 3), warmed_net(2, 4));
    let x = random_matrix(40, 2, 1);
    let base = EnergyPair::from_networks(a.clone(), b.clone()).unwrap();
    let s = base.score(&x).unwrap();
    let c = 0.25;
    let mut bq = b.clone();
    bq.shift_output(c);
    let shifted = EnergyPair::from_networks(a.clone(), bq.clone()).unwrap();
    let t = shifted.score(&x).unwrap();
    for (u, v) in s.iter().zip(t.iter()) {
        assert!((v - u - c).abs() < 1e-12);
    }
    let labels_before = base.predict(&x).unwrap();
    let labels_after = shifted.predict(&x).unwrap();
    for i in 0..40 {
        if labels_before[i] != labels_after[i] {
            assert!(s[i] < 0.0 && s[i] >= -c - 1e-12, "a label changed away from the zero crossing");
        }
    }
    let mut ap = a;
    ap.shift_output(c);
    let both = EnergyPair::from_networks(ap, bq).unwrap().score(&x).unwrap();
    for (u, v) in s.iter().zip(both.iter()) {
        assert!((u - v).abs() < 1e-12);
    }
}

#[test]
fn scores_do_not_depend_on_batch_composition() {
    let pair = EnergyPair::from_networks(warmed_net(3, 1), warmed_net(3, 2)).unwrap();
    let x = random_matrix(10, 3, 4);
    let all = pair.score(&x).unwrap();
    let part = pair.score(&x.select(Axis(0), &[7, 2])).unwrap();
    assert_eq!(part[0], all[7]);
    assert_eq!(part[1], all[2]);
}

#[test]
fn disabled_terms_leave_g_p_untouched() {
    let (mut g_p, mut g_q) = (small_net(2, 1), small_net(2, 2));
    let lp = random_matrix(4, 2, 1);
    let u = random_matrix(12, 2, 2);
    let samples = random_matrix(6, 2, 3);
    let weights = EbmLossWeights {
        alpha: 0.0,
        gamma: 0.0,
        ..EbmLossWeights::default()
    };
    let rows = BatchRows {
        lp: &lp,
        u: &u,
        samples_p: &samples,
        samples_q: &samples,
    };
    let before = g_p.clone();
    let out = batch_loss(&mut g_p, &mut g_q, rows, &weights, PuSurrogate::Sigmoid).unwrap();
    assert!(out.grads_p.iter().all(|g| g.iter().all(|&v| v == 0.0)));
    assert!(out.grads_q.iter().any(|g| g.iter().any(|&v| v != 0.0)));
    assert_eq!(g_p, before);
}

#[test]
fn default_loss_weights() {
    let w = EbmLossWeights::default();
    assert_eq!((w.alpha, w.beta, w.gamma), (1.0, 1.0, 1.0));
    let l = LangevinConfig::default();
    assert_eq!((l.steps, l.step_size), (100, 0.01));
    assert!((l.noise() - 0.1).abs() < 1e-15);
}

fn tiny_em() -> EmConfig {
    let mut c = EmConfig {
        network: MlpConfig {
            layer_count: 3,
            hidden_width: 16,
            ..MlpConfig::default()
        },
        train: TrainConfig {
            batch_size: 32,
            epochs: 2,
            ..TrainConfig::default()
        },
        n_negatives: Some(16),
        ..EmConfig::default()
    };
    c.langevin.steps = 10;
    c
}

fn two_blobs(seed: u64) -> (Array2<f64>, Array2<f64>) {
    let lp = random_matrix(20, 2, seed) + 1.5;
    let u = ndarray::concatenate(Axis(0), &[(random_matrix(30, 2, seed + 1) + 1.5).view(), (random_matrix(70, 2, seed + 2) - 1.5).view()]).unwrap();
    (lp, u)
}

#[test]
fn training_is_deterministic_and_traced() {
    let (lp, u) = two_blobs(1);
    let a = train_pude_em(&lp, &u, &tiny_em(), 3).unwrap();
    let b = train_pude_em(&lp, &u, &tiny_em(), 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trace.len(), 2);
    assert!(a.trace.iter().all(|t| t.total.is_finite()));
    let c = train_pude_em(&lp, &u, &tiny_em(), 4).unwrap();
    assert_ne!(a.g_q, c.g_q);
    let s = a.score(&u).unwrap();
    assert!(s.iter().all(|v| v.is_finite()));
}

#[test]
fn untrained_or_mismatched_pairs_are_errors() {
    assert!(EnergyPair::from_networks(small_net(2, 0), small_net(3, 0)).is_err());
    let (lp, u) = two_blobs(1);
    assert!(train_pude_em(&Array2::zeros((0, 2)), &u, &tiny_em(), 0).is_err());
    assert!(train_pude_em(&lp, &Array2::zeros((5, 3)), &tiny_em(), 0).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let (lp, u) = two_blobs(2);
    let pair = train_pude_em(&lp, &u, &tiny_em(), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("em.json");
    pair.save(&path).unwrap();
    let back = EnergyPair::load(&path).unwrap();
    assert_eq!(back.score(&u).unwrap(), pair.score(&u).unwrap());
}
