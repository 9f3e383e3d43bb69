use ndarray::{Array2, Axis};
use proptest::prelude::*;
use pude_core::nn::gradcheck::relative_error;
use pude_core::vae::{kl_diag_gaussian, train_vae, VaeConfig, VaeModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

fn small_config(input_dim: usize) -> VaeConfig {
    VaeConfig {
        hidden_dim: 16,
        latent_dim: 3,
        epochs: 20,
        batch_size: 32,
        ..VaeConfig::new(input_dim)
    }
}

/// Rows lying near a two-dimensional plane inside eight dimensions.
fn low_rank_corpus(rows: usize, seed: u64) -> Array2<f64> {
    let z = normal_matrix(rows, 2, seed);
    let w = normal_matrix(2, 8, seed + 1);
    z.dot(&w) + normal_matrix(rows, 8, seed + 2) * 0.1
}

#[test]
fn closed_form_kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..3 {
        let d = 4;
        let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let logvar: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            // log q(z) - log p(z) at z ~ q
            let mut v = 0.0;
            for j in 0..d {
                let e: f64 = StandardNormal.sample(&mut rng);
                let z = mu[j] + (0.5 * logvar[j]).exp() * e;
                v += -0.5 * logvar[j] - 0.5 * e * e + 0.5 * z * z;
            }
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        let exact = kl_diag_gaussian(&mu, &logvar);
        assert!((mean - exact).abs() < 2.0 * se, "MC {mean} vs closed form {exact} (se {se})");
    }
}

proptest! {
    #[test]
    fn kl_is_non_negative(pairs in prop::collection::vec((-10.0f64..10.0, -8.0f64..8.0), 1..16)) {
        let (mu, logvar): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!(kl_diag_gaussian(&mu, &logvar) >= 0.0);
    }
}

/// Central differences of `-elbo` for every parameter with the noise held fixed.
fn numeric_gradients(model: &VaeModel, batch: &Array2<f64>, noise: &Array2<f64>, objective: fn(&VaeModel, &Array2<f64>, &Array2<f64>) -> f64) -> Vec<Array2<f64>> {
    let eps = 1e-5;
    let mut work = model.clone();
    let shapes: Vec<_> = work.params_mut().iter().map(|(_, p)| p.dim()).collect();
    let mut out = Vec::new();
    for (k, shape) in shapes.into_iter().enumerate() {
        let mut g = Array2::zeros(shape);
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let orig = work.params_mut()[k].1[[i, j]];
                work.params_mut()[k].1[[i, j]] = orig + eps;
                let up = objective(&work, batch, noise);
                work.params_mut()[k].1[[i, j]] = orig - eps;
                let down = objective(&work, batch, noise);
                work.params_mut()[k].1[[i, j]] = orig;
                g[[i, j]] = (up - down) / (2.0 * eps);
            }
        }
        out.push(g);
    }
    out
}

fn neg_elbo(m: &VaeModel, b: &Array2<f64>, n: &Array2<f64>) -> f64 {
    -m.elbo_with_noise(b, n).unwrap().elbo
}

fn neg_reconstruction(m: &VaeModel, b: &Array2<f64>, n: &Array2<f64>) -> f64 {
    -m.elbo_with_noise(b, n).unwrap().reconstruction
}

#[test]
fn reparameterized_gradients_match_finite_differences() {
    let cfg = VaeConfig {
        hidden_dim: 6,
        latent_dim: 2,
        ..VaeConfig::new(5)
    };
    let model = VaeModel::new(cfg, 3).unwrap();
    let batch = normal_matrix(7, 5, 11);
    let noise = normal_matrix(7, 2, 12);
    let (_, analytic) = model.gradients(&batch, &noise).unwrap();
    let numeric = numeric_gradients(&model, &batch, &noise, neg_elbo);
    for (a, n) in analytic.iter().zip(&numeric) {
        let err = relative_error(a, n);
        assert!(err < 1e-3, "relative error {err}");
    }
}

#[test]
fn zero_kl_weight_is_a_plain_autoencoder() {
    let base = VaeConfig {
        hidden_dim: 6,
        latent_dim: 2,
        ..VaeConfig::new(5)
    };
    let ae = VaeModel::new(VaeConfig { kl_weight: 0.0, ..base.clone() }, 3).unwrap();
    let vae = VaeModel::new(base, 3).unwrap();
    let batch = normal_matrix(7, 5, 21);
    let noise = normal_matrix(7, 2, 22);
    let (_, g_ae) = ae.gradients(&batch, &noise).unwrap();
    // Autoencoder fixture: the reconstruction term alone, differentiated numerically.
    let oracle = numeric_gradients(&ae, &batch, &noise, neg_reconstruction);
    for (a, n) in g_ae.iter().zip(&oracle) {
        assert!(relative_error(a, n) < 1e-3);
    }
    let (_, g_vae) = vae.gradients(&batch, &noise).unwrap();
    let n_encoder = 4;
    assert!(g_ae[..n_encoder].iter().zip(&g_vae[..n_encoder]).any(|(a, b)| relative_error(a, b) > 1e-3));
    for (a, b) in g_ae[n_encoder..].iter().zip(&g_vae[n_encoder..]) {
        assert_eq!(a, b, "the KL term does not reach the decoder");
    }
}

#[test]
fn training_does_not_degrade_the_elbo() {
    let x = low_rank_corpus(300, 5);
    let model = train_vae(&x, small_config(8), 9).unwrap();
    let trace = model.loss_trace();
    assert_eq!(trace.len(), 20);
    assert!(trace.iter().all(|t| t.elbo.is_finite() && t.reconstruction.is_finite() && t.kl.is_finite()));
    assert!(trace.last().unwrap().elbo >= trace[0].elbo);
}

#[test]
fn identical_rows_collapse_to_one_code() {
    let row = normal_matrix(1, 8, 4);
    let x = row.broadcast((64, 8)).unwrap().to_owned();
    let model = train_vae(&x, VaeConfig { epochs: 300, ..small_config(8) }, 2).unwrap();
    let codes = model.encode(&x).unwrap();
    for r in codes.outer_iter() {
        for (a, b) in r.iter().zip(codes.row(0)) {
            assert!((a - b).abs() < 1e-3);
        }
    }
    // The row-constant optimum reconstructs every row exactly; the squared
    // error must have moved most of the way there.
    let d = 8.0;
    let sse = |t: f64| -2.0 * (t + 0.5 * d * (2.0 * std::f64::consts::PI).ln());
    let trace = model.loss_trace();
    let (first, last) = (sse(trace[0].reconstruction), sse(trace.last().unwrap().reconstruction));
    assert!(last < 0.05 * first, "squared error {first} -> {last}");
}

#[test]
fn encode_is_a_deterministic_row_map() {
    let x = low_rank_corpus(120, 8);
    let model = train_vae(&x, VaeConfig { epochs: 2, ..small_config(8) }, 1).unwrap();
    let a = model.encode(&x).unwrap();
    let b = model.encode(&x).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.ncols(), 3);
    for i in [0, 57, 119] {
        let single = model.encode(&x.select(Axis(0), &[i])).unwrap();
        assert_eq!(single.row(0), a.row(i));
    }
}

#[test]
fn default_latent_width_is_fifty() {
    let x = normal_matrix(40, 60, 3);
    let cfg = VaeConfig {
        epochs: 1,
        ..VaeConfig::new(60)
    };
    let model = train_vae(&x, cfg, 0).unwrap();
    assert_eq!(model.config().hidden_dim, 256);
    assert_eq!(model.encode(&x).unwrap().ncols(), 50);
}

#[test]
fn same_seed_same_model() {
    let x = low_rank_corpus(100, 1);
    let a = train_vae(&x, VaeConfig { epochs: 3, ..small_config(8) }, 4).unwrap();
    let b = train_vae(&x, VaeConfig { epochs: 3, ..small_config(8) }, 4).unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoint_round_trip() {
    let x = low_rank_corpus(50, 2);
    let model = train_vae(&x, VaeConfig { epochs: 1, ..small_config(8) }, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vae.json");
    model.save(&path).unwrap();
    let back = VaeModel::load(&path).unwrap();
    assert_eq!(back.encode(&x).unwrap(), model.encode(&x).unwrap());
}
